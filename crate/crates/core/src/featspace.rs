//! Frozen feature encoder, cross-domain shift geometry and the
//! direction-consistency losses built on it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::numeric::{dot, norm2, pairwise_sum, solve_dense, sub};
use crate::radiomap::RadioMap;

pub type FeatureVector = Vec<f64>;

pub const DEFAULT_POOL: usize = 8;
pub const DEFAULT_DIM: usize = 64;
pub const LIPSCHITZ_SAFETY: f64 = 1.01;
pub const DEGENERATE_SHIFT: f64 = 1e-12;
const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITERS: usize = 10_000;
const UNIT_TOL: f64 = 1e-9;

/// A frozen map from a row-major field to a feature vector.
///
/// `pullback` returns the transposed Jacobian applied to a feature-space
/// cotangent, which is all the training code needs to differentiate through
/// the encoder.
pub trait FeatureEncoder: Send + Sync {
    fn input_shape(&self) -> (usize, usize);
    fn dim(&self) -> usize;
    fn encode(&self, field: &[f64]) -> Result<FeatureVector>;
    fn pullback(&self, field: &[f64], cotangent: &[f64]) -> Result<Vec<f64>>;

    fn encode_map(&self, map: &RadioMap) -> Result<FeatureVector> {
        self.encode(map.values())
    }
}

/// Average pooling to `pool x pool` followed by a fixed dense projection.
///
/// Grids that are not divisible by `pool` are padded by half-sample
/// reflection up to `pool * ceil(n / pool)` before pooling.
#[derive(Clone, Debug)]
pub struct LinearEncoder {
    width: usize,
    height: usize,
    pool: usize,
    dim: usize,
    /// Row-major `dim x pool^2`.
    projection: Vec<f64>,
    /// For each pooled cell, the `(input index, weight)` pairs it averages.
    taps: Vec<Vec<(usize, f64)>>,
    operator_norm: f64,
}

fn reflect(i: usize, n: usize) -> usize {
    let p = 2 * n;
    let m = i % p;
    if m >= n {
        p - 1 - m
    } else {
        m
    }
}

fn pool_taps(width: usize, height: usize, pool: usize) -> Vec<Vec<(usize, f64)>> {
    let bw = width.div_ceil(pool);
    let bh = height.div_ceil(pool);
    let weight = 1.0 / (bw * bh) as f64;
    let mut taps = Vec::with_capacity(pool * pool);
    for py in 0..pool {
        for px in 0..pool {
            let mut cell: Vec<(usize, f64)> = Vec::with_capacity(bw * bh);
            for y in py * bh..(py + 1) * bh {
                for x in px * bw..(px + 1) * bw {
                    let idx = reflect(y, height) * width + reflect(x, width);
                    match cell.iter_mut().find(|(i, _)| *i == idx) {
                        Some(t) => t.1 += weight,
                        None => cell.push((idx, weight)),
                    }
                }
            }
            taps.push(cell);
        }
    }
    taps
}

impl LinearEncoder {
    /// Encoder with a seeded Gaussian projection scaled by `1 / pool`.
    pub fn new(width: usize, height: usize, pool: usize, dim: usize, seed: u64) -> Result<Self> {
        if pool == 0 || dim == 0 {
            return Err(Error::arg("pool size and feature dimension must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / pool as f64;
        let projection = (0..dim * pool * pool)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * scale
            })
            .collect();
        Self::with_projection(width, height, pool, dim, projection)
    }

    /// Desk defaults: pool 8, 64 features.
    pub fn desk(width: usize, height: usize, seed: u64) -> Result<Self> {
        Self::new(width, height, DEFAULT_POOL, DEFAULT_DIM, seed)
    }

    pub fn with_projection(width: usize, height: usize, pool: usize, dim: usize, projection: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || pool == 0 || dim == 0 {
            return Err(Error::arg("encoder dimensions must be positive"));
        }
        if pool > width || pool > height {
            return Err(Error::arg(format!("pool size {pool} exceeds the {width}x{height} grid")));
        }
        if projection.len() != dim * pool * pool {
            return Err(Error::arg(format!(
                "projection has {} entries, expected {dim} x {}",
                projection.len(),
                pool * pool
            )));
        }
        if projection.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("projection entries must be finite"));
        }
        let taps = pool_taps(width, height, pool);
        let mut enc = LinearEncoder { width, height, pool, dim, projection, taps, operator_norm: 0.0 };
        enc.operator_norm = enc.power_iteration()?;
        Ok(enc)
    }

    pub fn pool(&self) -> usize {
        self.pool
    }

    pub fn projection(&self) -> &[f64] {
        &self.projection
    }

    /// Operator 2-norm of the composite map, without the safety factor.
    pub fn operator_norm(&self) -> f64 {
        self.operator_norm
    }

    /// Lipschitz constant used by the bound checks (`1.01 x` the operator norm).
    pub fn lipschitz_bound(&self) -> f64 {
        LIPSCHITZ_SAFETY * self.operator_norm
    }

    fn pool_field(&self, field: &[f64]) -> Vec<f64> {
        self.taps.iter().map(|cell| cell.iter().map(|&(i, w)| w * field[i]).sum()).collect()
    }

    fn project(&self, pooled: &[f64]) -> Vec<f64> {
        let n = self.pool * self.pool;
        (0..self.dim).map(|r| dot(&self.projection[r * n..(r + 1) * n], pooled)).collect()
    }

    fn apply(&self, field: &[f64]) -> Vec<f64> {
        self.project(&self.pool_field(field))
    }

    fn apply_transpose(&self, g: &[f64]) -> Vec<f64> {
        let n = self.pool * self.pool;
        let mut pooled = vec![0.0; n];
        for (r, &gr) in g.iter().enumerate() {
            for (p, m) in pooled.iter_mut().zip(&self.projection[r * n..(r + 1) * n]) {
                *p += gr * m;
            }
        }
        let mut out = vec![0.0; self.width * self.height];
        for (cell, &p) in self.taps.iter().zip(&pooled) {
            for &(i, w) in cell {
                out[i] += w * p;
            }
        }
        out
    }

    /// Largest singular value by power iteration on `A^T A`.
    fn power_iteration(&self) -> Result<f64> {
        let n = self.width * self.height;
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let mut x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let nx = norm2(&x);
        x.iter_mut().for_each(|v| *v /= nx);
        let mut sigma = 0.0;
        for _ in 0..POWER_MAX_ITERS {
            let ax = self.apply(&x);
            let next_sigma = norm2(&ax);
            if next_sigma == 0.0 {
                return Ok(0.0);
            }
            let mut y = self.apply_transpose(&ax);
            let ny = norm2(&y);
            y.iter_mut().for_each(|v| *v /= ny);
            x = y;
            if (next_sigma - sigma).abs() <= POWER_TOL * next_sigma {
                return Ok(next_sigma);
            }
            sigma = next_sigma;
        }
        Err(Error::Numeric(format!("power iteration did not converge in {POWER_MAX_ITERS} iterations")))
    }

    /// Dense `dim x (width * height)` matrix of the encoder.
    pub fn matrix(&self) -> Vec<f64> {
        let n = self.width * self.height;
        let mut m = vec![0.0; self.dim * n];
        let pn = self.pool * self.pool;
        for r in 0..self.dim {
            for (p, cell) in self.taps.iter().enumerate() {
                let c = self.projection[r * pn + p];
                for &(i, w) in cell {
                    m[r * n + i] += c * w;
                }
            }
        }
        m
    }

    /// Minimum-norm field `U` with `encode(U) == z`, i.e. `A^T (A A^T)^{-1} z`.
    pub fn right_inverse(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.dim {
            return Err(Error::arg(format!("feature vector has length {}, expected {}", z.len(), self.dim)));
        }
        let a = self.matrix();
        let n = self.width * self.height;
        let mut gram = vec![0.0; self.dim * self.dim];
        for i in 0..self.dim {
            for j in 0..=i {
                let g = dot(&a[i * n..(i + 1) * n], &a[j * n..(j + 1) * n]);
                gram[i * self.dim + j] = g;
                gram[j * self.dim + i] = g;
            }
        }
        let y = solve_dense(&gram, z, self.dim)
            .ok_or_else(|| Error::Numeric("encoder has no right inverse (rank deficient)".into()))?;
        Ok(self.apply_transpose(&y))
    }

    fn check_field(&self, field: &[f64]) -> Result<()> {
        if field.len() != self.width * self.height {
            return Err(Error::arg(format!(
                "field has {} cells, encoder expects {}x{}",
                field.len(),
                self.width,
                self.height
            )));
        }
        Ok(())
    }
}

impl FeatureEncoder for LinearEncoder {
    fn input_shape(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, field: &[f64]) -> Result<FeatureVector> {
        self.check_field(field)?;
        Ok(self.apply(field))
    }

    fn pullback(&self, field: &[f64], cotangent: &[f64]) -> Result<Vec<f64>> {
        self.check_field(field)?;
        if cotangent.len() != self.dim {
            return Err(Error::arg(format!("cotangent has length {}, expected {}", cotangent.len(), self.dim)));
        }
        Ok(self.apply_transpose(cotangent))
    }
}

/// Both sides of `||Phi(mu) - Phi(mp)|| <= L ||mu - mp||`.
#[derive(Clone, Debug, PartialEq)]
pub struct IncrementReport {
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

pub fn feature_increment_check(enc: &LinearEncoder, mp: &RadioMap, mu: &RadioMap) -> Result<IncrementReport> {
    if !mp.same_shape(mu) {
        return Err(Error::arg("paired maps must have equal shapes"));
    }
    let lhs = norm2(&sub(&enc.encode(mu.values())?, &enc.encode(mp.values())?));
    let rhs = enc.lipschitz_bound() * norm2(&sub(mu.values(), mp.values()));
    Ok(IncrementReport { lhs, rhs, pass: lhs <= rhs })
}

/// Mean MP-to-MU feature shift and per-sample statistics around it.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftGeometry {
    pub w: Vec<f64>,
    pub v: Vec<f64>,
    /// Largest deviation `||delta_i||` of a sample shift from `w`.
    pub eta_bound: f64,
    /// Per-sample target magnitude along `v`, clamped at 0.
    pub per_sample_eta: Vec<f64>,
}

impl ShiftGeometry {
    pub fn dim(&self) -> usize {
        self.w.len()
    }

    /// Checks the invariants a deserialized or hand-built geometry must satisfy.
    pub fn validate(&self) -> Result<()> {
        if self.w.is_empty() || self.v.len() != self.w.len() {
            return Err(Error::Config("shift geometry has inconsistent dimensions".into()));
        }
        let all = self.w.iter().chain(&self.v).chain(&self.per_sample_eta).chain(std::iter::once(&self.eta_bound));
        if all.clone().any(|x| !x.is_finite()) {
            return Err(Error::Config("shift geometry contains non-finite values".into()));
        }
        let nw = norm2(&self.w);
        if nw < DEGENERATE_SHIFT {
            return Err(Error::Config(Error::DegenerateShift { norm: nw, threshold: DEGENERATE_SHIFT }.to_string()));
        }
        if (norm2(&self.v) - 1.0).abs() > UNIT_TOL {
            return Err(Error::Config("shift direction is not a unit vector".into()));
        }
        if self.per_sample_eta.iter().any(|&e| e < 0.0) || self.eta_bound < 0.0 {
            return Err(Error::Config("shift magnitudes must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShiftEstimate {
    pub geometry: ShiftGeometry,
    /// Samples whose raw projection onto `v` was negative and got clamped.
    pub clamped: usize,
    /// `delta_i`, the deviation of each sample shift from the mean.
    pub deviations: Vec<Vec<f64>>,
}

/// Shift geometry from per-pair feature differences `Phi(mu_i) - Phi(mp_i)`.
pub fn estimate_shift_from_differences(diffs: &[Vec<f64>]) -> Result<ShiftEstimate> {
    let Some(first) = diffs.first() else {
        return Err(Error::arg("shift estimation needs at least one pair"));
    };
    let d = first.len();
    if d == 0 || diffs.iter().any(|x| x.len() != d) {
        return Err(Error::arg("feature differences must share one nonzero dimension"));
    }
    let n = diffs.len() as f64;
    let w: Vec<f64> = (0..d)
        .map(|k| pairwise_sum(&diffs.iter().map(|x| x[k]).collect::<Vec<_>>()) / n)
        .collect();
    let nw = norm2(&w);
    if !(nw >= DEGENERATE_SHIFT) {
        return Err(Error::DegenerateShift { norm: nw, threshold: DEGENERATE_SHIFT });
    }
    let v: Vec<f64> = w.iter().map(|x| x / nw).collect();
    let deviations: Vec<Vec<f64>> = diffs.iter().map(|x| sub(x, &w)).collect();
    let eta_bound = deviations.iter().map(|x| norm2(x)).fold(0.0, f64::max);
    let mut clamped = 0;
    let per_sample_eta = diffs
        .iter()
        .map(|x| {
            let e = dot(&v, x);
            if e < 0.0 {
                clamped += 1;
                0.0
            } else {
                e
            }
        })
        .collect();
    Ok(ShiftEstimate { geometry: ShiftGeometry { w, v, eta_bound, per_sample_eta }, clamped, deviations })
}

/// Shift geometry of `(mp, mu)` map pairs under `enc`.
pub fn estimate_shift<E: FeatureEncoder + ?Sized>(enc: &E, pairs: &[(RadioMap, RadioMap)]) -> Result<ShiftEstimate> {
    let diffs = pairs
        .iter()
        .map(|(mp, mu)| Ok(sub(&enc.encode_map(mu)?, &enc.encode_map(mp)?)))
        .collect::<Result<Vec<_>>>()?;
    estimate_shift_from_differences(&diffs)
}

/// Worst case of `| ||z_i^MU - z_j^MU|| - ||z_i^MP - z_j^MP|| | <= 2 eta` over all `i < j`.
#[derive(Clone, Debug, PartialEq)]
pub struct StabilityReport {
    pub pairs_checked: usize,
    /// Largest left-hand side observed.
    pub max_gap: f64,
    pub bound: f64,
    /// Largest amount by which a pair exceeds the bound beyond rounding; 0 when all hold.
    pub max_violation: f64,
    pub violations: usize,
}

pub fn distance_stability_features(z_mp: &[Vec<f64>], z_mu: &[Vec<f64>], eta: f64) -> Result<StabilityReport> {
    if z_mp.len() != z_mu.len() {
        return Err(Error::arg("MP and MU feature lists differ in length"));
    }
    let bound = 2.0 * eta;
    let mut report = StabilityReport { pairs_checked: 0, max_gap: 0.0, bound, max_violation: 0.0, violations: 0 };
    for i in 0..z_mp.len() {
        for j in i + 1..z_mp.len() {
            let a = norm2(&sub(&z_mu[i], &z_mu[j]));
            let b = norm2(&sub(&z_mp[i], &z_mp[j]));
            let gap = (a - b).abs();
            // Rounding in the two norms is relative to their magnitude.
            let tol = 1e-12 * (a + b + bound);
            report.pairs_checked += 1;
            report.max_gap = report.max_gap.max(gap);
            let excess = gap - bound - tol;
            if excess > 0.0 {
                report.violations += 1;
                report.max_violation = report.max_violation.max(excess);
            }
        }
    }
    Ok(report)
}

pub fn distance_stability_check<E: FeatureEncoder + ?Sized>(
    enc: &E,
    pairs: &[(RadioMap, RadioMap)],
    geometry: &ShiftGeometry,
) -> Result<StabilityReport> {
    if pairs.len() < 2 {
        return Err(Error::arg("distance stability needs at least two pairs"));
    }
    let z_mp = pairs.iter().map(|(mp, _)| enc.encode_map(mp)).collect::<Result<Vec<_>>>()?;
    let z_mu = pairs.iter().map(|(_, mu)| enc.encode_map(mu)).collect::<Result<Vec<_>>>()?;
    distance_stability_features(&z_mp, &z_mu, geometry.eta_bound)
}

/// Split of a vector into its component along `w` and the orthogonal rest.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub alpha: f64,
    pub parallel: Vec<f64>,
    pub perp: Vec<f64>,
}

fn check_direction(w: &[f64], len: usize) -> Result<f64> {
    if w.len() != len {
        return Err(Error::arg(format!("direction has length {}, expected {len}", w.len())));
    }
    let ww = dot(w, w);
    if !(ww > 0.0) {
        return Err(Error::arg("direction vector must be nonzero"));
    }
    Ok(ww)
}

pub fn project(dz: &[f64], w: &[f64]) -> Result<Projection> {
    let ww = check_direction(w, dz.len())?;
    let alpha = dot(dz, w) / ww;
    let parallel: Vec<f64> = w.iter().map(|x| alpha * x).collect();
    let perp = sub(dz, &parallel);
    Ok(Projection { alpha, parallel, perp })
}

/// Decomposition `vec = alpha w + e` and whether `vec` lies in the
/// directionally consistent cone (`alpha >= -tol`).
#[derive(Clone, Debug, PartialEq)]
pub struct ConeMembership {
    pub member: bool,
    pub alpha: f64,
    pub residual: Vec<f64>,
}

pub fn cone_membership(vec: &[f64], w: &[f64], tol: f64) -> Result<ConeMembership> {
    let p = project(vec, w)?;
    Ok(ConeMembership { member: p.alpha >= -tol, alpha: p.alpha, residual: p.perp })
}

/// Batch loss: mean squared orthogonal component plus `beta` times the mean
/// squared hinge on misalignment with `w`.
pub fn dcl_batch(dzs: &[Vec<f64>], w: &[f64], beta: f64) -> Result<f64> {
    if dzs.is_empty() {
        return Err(Error::arg("direction loss needs a nonempty batch"));
    }
    if !(beta >= 0.0) {
        return Err(Error::arg(format!("beta must be nonnegative, got {beta}")));
    }
    let mut perp_terms = Vec::with_capacity(dzs.len());
    let mut hinge_terms = Vec::with_capacity(dzs.len());
    for dz in dzs {
        let p = project(dz, w)?;
        perp_terms.push(dot(&p.perp, &p.perp));
        let hinge = (-dot(dz, w)).max(0.0);
        hinge_terms.push(hinge * hinge);
    }
    let n = dzs.len() as f64;
    Ok(pairwise_sum(&perp_terms) / n + beta * pairwise_sum(&hinge_terms) / n)
}

fn check_finetune_args(dh: &[f64], v: &[f64], eta: f64, beta: f64) -> Result<()> {
    check_direction(v, dh.len())?;
    let nv = norm2(v);
    if (nv - 1.0).abs() > UNIT_TOL {
        return Err(Error::arg(format!("direction must be a unit vector, |v| = {nv}")));
    }
    if !(eta >= 0.0) {
        return Err(Error::arg(format!("target magnitude must be nonnegative, got {eta}")));
    }
    if !(beta >= 0.0) {
        return Err(Error::arg(format!("beta must be nonnegative, got {beta}")));
    }
    Ok(())
}

/// `||dh_perp||^2 + beta (dh . v - eta)^2` for a unit direction `v`.
pub fn dcl_finetune(dh: &[f64], v: &[f64], eta: f64, beta: f64) -> Result<f64> {
    Ok(dcl_finetune_with_grad(dh, v, eta, beta)?.0)
}

/// Loss value and its gradient with respect to `dh`.
pub fn dcl_finetune_with_grad(dh: &[f64], v: &[f64], eta: f64, beta: f64) -> Result<(f64, Vec<f64>)> {
    check_finetune_args(dh, v, eta, beta)?;
    let p = project(dh, v)?;
    let along = dot(dh, v) - eta;
    let loss = dot(&p.perp, &p.perp) + beta * along * along;
    let grad = p.perp.iter().zip(v).map(|(e, vk)| 2.0 * e + 2.0 * beta * along * vk).collect();
    Ok((loss, grad))
}
