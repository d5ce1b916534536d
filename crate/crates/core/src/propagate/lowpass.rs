//! Truncated Gaussian smoothing and the residual bounds it admits.

use crate::error::{Error, Result};
use crate::radiomap::RadioMap;

/// Separable Gaussian kernel truncated at `radius = ceil(3 sigma)` and
/// renormalized to unit mass.
#[derive(Clone, Debug, PartialEq)]
pub struct LowPassKernel {
    pub sigma: f64,
    pub radius: usize,
    /// 1-D weights for offsets `-radius..=radius`; the 2-D weight is the outer product.
    pub weights_1d: Vec<f64>,
}

impl LowPassKernel {
    pub fn gaussian(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::arg(format!("bandwidth must be positive, got {sigma}")));
        }
        let radius = (3.0 * sigma).ceil() as usize;
        let raw: Vec<f64> = (-(radius as isize)..=radius as isize)
            .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
            .collect();
        let total: f64 = raw.iter().sum();
        Ok(LowPassKernel { sigma, radius, weights_1d: raw.iter().map(|w| w / total).collect() })
    }

    pub fn weight(&self, dx: isize, dy: isize) -> f64 {
        let r = self.radius as isize;
        if dx.abs() > r || dy.abs() > r {
            return 0.0;
        }
        self.weights_1d[(dx + r) as usize] * self.weights_1d[(dy + r) as usize]
    }

    /// Row-major `(2r+1) x (2r+1)` weights.
    pub fn weights_2d(&self) -> Vec<f64> {
        let r = self.radius as isize;
        (-r..=r).flat_map(|dy| (-r..=r).map(move |dx| (dx, dy))).map(|(dx, dy)| self.weight(dx, dy)).collect()
    }

    /// Largest single-cell weight (`||kappa||_inf` times the cell area).
    pub fn max_weight(&self) -> f64 {
        self.weight(0, 0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Boundary {
    /// Half-sample symmetric extension (`-1 -> 0`, `n -> n-1`), periodic in `2n`.
    Reflect,
    /// Values outside the grid are zero: the integral runs over the domain only.
    Zero,
}

fn reflect_index(idx: isize, n: usize) -> usize {
    let p = 2 * n as isize;
    let m = idx.rem_euclid(p);
    if m >= n as isize {
        (p - 1 - m) as usize
    } else {
        m as usize
    }
}

fn convolve_1d(src: &[f64], w: usize, h: usize, kernel: &LowPassKernel, boundary: Boundary, horizontal: bool) -> Vec<f64> {
    let r = kernel.radius as isize;
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (pos, n) = if horizontal { (x as isize, w) } else { (y as isize, h) };
            let mut acc = 0.0;
            for k in -r..=r {
                let q = pos + k;
                let q = match boundary {
                    Boundary::Reflect => reflect_index(q, n),
                    Boundary::Zero if q < 0 || q >= n as isize => continue,
                    Boundary::Zero => q as usize,
                };
                let v = if horizontal { src[y * w + q] } else { src[q * w + x] };
                acc += kernel.weights_1d[(k + r) as usize] * v;
            }
            out[y * w + x] = acc;
        }
    }
    out
}

pub fn lowpass_with(map: &RadioMap, kernel: &LowPassKernel, boundary: Boundary) -> RadioMap {
    let (w, h) = (map.width(), map.height());
    let rows = convolve_1d(map.values(), w, h, kernel, boundary, true);
    let both = convolve_1d(&rows, w, h, kernel, boundary, false);
    RadioMap::from_values(w, h, both).expect("nonnegative kernel preserves nonnegativity")
}

/// Smooths `map` with a Gaussian of bandwidth `sigma` cells under reflective boundaries.
pub fn lowpass(map: &RadioMap, sigma: f64) -> Result<RadioMap> {
    Ok(lowpass_with(map, &LowPassKernel::gaussian(sigma)?, Boundary::Reflect))
}

#[derive(Clone, Debug, PartialEq)]
pub struct YoungL2Report {
    pub smoothed_norm: f64,
    pub residual_norm: f64,
    pub pass: bool,
}

/// `||L_sigma[dU]||_2 <= ||kappa||_1 ||dU||_2 = ||dU||_2` for the reflective operator.
pub fn verify_young_l2(residual: &RadioMap, kernel: &LowPassKernel) -> YoungL2Report {
    let smoothed_norm = lowpass_with(residual, kernel, Boundary::Reflect).norm2();
    let residual_norm = residual.norm2();
    YoungL2Report { smoothed_norm, residual_norm, pass: smoothed_norm <= residual_norm * (1.0 + 1e-12) }
}

/// Sup-norm bound on the smoothed residual through its support.
///
/// `lhs = ||L[dU]||_inf`, `young_rhs = ||kappa||_inf ||dU||_1` and
/// `rhs = ||kappa||_inf U_max |S|`, where `kappa` is the kernel density
/// (weight per unit area) and `|S|` is the support area. The smoothing here
/// integrates over the grid only (zero extension).
#[derive(Clone, Debug, PartialEq)]
pub struct LowFreqBoundReport {
    pub lhs: f64,
    pub young_rhs: f64,
    pub rhs: f64,
    pub l1: f64,
    pub support_area: f64,
    pub pass: bool,
}

pub fn verify_lowfreq_bound(
    residual: &super::Residual,
    kernel: &LowPassKernel,
    cell_size: f64,
) -> LowFreqBoundReport {
    let area = cell_size * cell_size;
    let smoothed = lowpass_with(&residual.map, kernel, Boundary::Zero);
    let lhs = smoothed.max();
    let kappa_inf = kernel.max_weight() / area;
    let l1 = residual.map.values().iter().sum::<f64>() * area;
    let support_area = residual.support_cells as f64 * area;
    let young_rhs = kappa_inf * l1;
    let rhs = kappa_inf * residual.u_max * support_area;
    let slack = 1.0 + 1e-12;
    let pass = lhs <= young_rhs * slack && young_rhs <= rhs * slack;
    LowFreqBoundReport { lhs, young_rhs, rhs, l1, support_area, pass }
}
