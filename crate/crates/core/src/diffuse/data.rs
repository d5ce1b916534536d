use crate::envgrid::Scene;
use crate::error::{Error, Result};
use crate::radiomap::RadioMap;

/// Additive floor before taking `log10` of a linear-power map.
pub const POWER_FLOOR: f64 = 1e-7;
pub const CONDITION_CHANNELS: usize = 3;
pub const TIME_EMBED_DIM: usize = 16;

/// Min-max statistics of `log10(U + floor)` over a dataset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormStats {
    pub lo: f64,
    pub hi: f64,
}

impl NormStats {
    /// `lo` is the floor itself, so cells without any path map to 0.
    pub fn from_maps<'a>(maps: impl IntoIterator<Item = &'a RadioMap>) -> Result<Self> {
        let lo = POWER_FLOOR.log10();
        let hi = maps.into_iter().map(|m| (m.max() + POWER_FLOOR).log10()).fold(f64::NEG_INFINITY, f64::max);
        if !(hi > lo) {
            return Err(Error::arg("normalization needs at least one map with positive power"));
        }
        Ok(NormStats { lo, hi })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.hi > self.lo) {
            return Err(Error::Config(format!("invalid normalization range [{}, {}]", self.lo, self.hi)));
        }
        Ok(())
    }

    pub fn normalize_value(&self, u: f64) -> f64 {
        ((u + POWER_FLOOR).log10() - self.lo) / (self.hi - self.lo)
    }

    pub fn normalize(&self, map: &RadioMap) -> Vec<f64> {
        map.values().iter().map(|&u| self.normalize_value(u)).collect()
    }

    /// Normalized map wrapped as a field. Values are nonnegative because `lo`
    /// is the floor.
    pub fn normalize_map(&self, map: &RadioMap) -> RadioMap {
        let vals = self.normalize(map).into_iter().map(|v| v.max(0.0)).collect();
        RadioMap::from_values(map.width(), map.height(), vals).expect("normalized values are finite")
    }

    pub fn denormalize_value(&self, x: f64) -> f64 {
        (10f64.powf(x * (self.hi - self.lo) + self.lo) - POWER_FLOOR).max(0.0)
    }

    pub fn denormalize(&self, width: usize, height: usize, x: &[f64]) -> Result<RadioMap> {
        RadioMap::from_values(width, height, x.iter().map(|&v| self.denormalize_value(v)).collect())
    }
}

/// Scene geometry as input channels: occupancy, distance to the transmitter
/// over the grid diagonal, and a unit-height Gaussian splat at the transmitter.
#[derive(Clone, Debug, PartialEq)]
pub struct Conditioning {
    pub width: usize,
    pub height: usize,
    /// `CONDITION_CHANNELS` planes, row-major.
    pub channels: Vec<f64>,
}

impl Conditioning {
    pub fn from_scene(scene: &Scene) -> Self {
        let g = &scene.grid;
        let (w, h) = (g.width(), g.height());
        let diag = ((w * w + h * h) as f64).sqrt();
        let tx = scene.tx.position();
        let n = w * h;
        let mut channels = vec![0.0; CONDITION_CHANNELS * n];
        for j in 0..h {
            for i in 0..w {
                let idx = j * w + i;
                let d = g.cell_center(i, j).dist(tx);
                channels[idx] = if g.is_occupied(i, j) { 1.0 } else { 0.0 };
                channels[n + idx] = d / diag;
                channels[2 * n + idx] = (-0.5 * d * d).exp();
            }
        }
        Conditioning { width: w, height: h, channels }
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Sinusoidal embedding of the integer step `t`.
pub fn time_embedding(t: usize) -> [f64; TIME_EMBED_DIM] {
    let mut e = [0.0; TIME_EMBED_DIM];
    let half = TIME_EMBED_DIM / 2;
    for k in 0..half {
        let freq = 1.0 / 10_000f64.powf(k as f64 / half as f64);
        e[2 * k] = (t as f64 * freq).sin();
        e[2 * k + 1] = (t as f64 * freq).cos();
    }
    e
}

/// How the clean target is split over the denoiser's output heads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadMode {
    /// One head predicting the noise on the whole map.
    Single,
    /// Two heads: the main-path channel and the residual channel, noised independently.
    Split,
}

impl HeadMode {
    pub fn heads(self) -> usize {
        match self {
            HeadMode::Single => 1,
            HeadMode::Split => 2,
        }
    }
}

/// One training example in normalized units.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainItem {
    pub cond: Conditioning,
    /// Clean target, `heads` stacked planes.
    pub x0: Vec<f64>,
    /// Normalized main-path reference used by the direction loss.
    pub x0_mp: Vec<f64>,
    /// Target shift magnitude along the frozen direction.
    pub eta: f64,
}

impl TrainItem {
    /// Pretraining example: the main-path map is the target.
    pub fn main_path(scene: &Scene, mp: &RadioMap, norm: &NormStats) -> Self {
        let x = norm.normalize(mp);
        TrainItem { cond: Conditioning::from_scene(scene), x0: x.clone(), x0_mp: x, eta: 0.0 }
    }

    /// Fine-tuning example with the multipath map as target.
    pub fn paired(scene: &Scene, mp: &RadioMap, mu: &RadioMap, norm: &NormStats, mode: HeadMode, eta: f64) -> Self {
        let xm = norm.normalize(mp);
        let xu = norm.normalize(mu);
        let x0 = match mode {
            HeadMode::Single => xu,
            HeadMode::Split => xm.iter().cloned().chain(xu.iter().zip(&xm).map(|(u, m)| u - m)).collect(),
        };
        TrainItem { cond: Conditioning::from_scene(scene), x0, x0_mp: xm, eta }
    }

    pub fn heads(&self) -> usize {
        self.x0.len() / self.cond.len()
    }
}
