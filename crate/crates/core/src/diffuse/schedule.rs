use crate::error::{Error, Result};

/// Variance-preserving schedule with linearly spaced `beta`.
///
/// Step indices run over `0..=T`; `t = 0` is the clean sample (`alpha_bar = 1`).
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    beta_min: f64,
    beta_max: f64,
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
}

pub const DEFAULT_STEPS: usize = 200;
pub const DEFAULT_BETA_MIN: f64 = 1e-4;
pub const DEFAULT_BETA_MAX: f64 = 0.02;

pub fn make_schedule(steps: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::arg("schedule needs at least one step"));
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(Error::arg(format!("need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]")));
    }
    let betas: Vec<f64> = (1..=steps)
        .map(|t| {
            if steps == 1 {
                beta_min
            } else {
                beta_min + (beta_max - beta_min) * (t - 1) as f64 / (steps - 1) as f64
            }
        })
        .collect();
    let mut alpha_bar = Vec::with_capacity(steps + 1);
    alpha_bar.push(1.0);
    for b in &betas {
        let prev = *alpha_bar.last().unwrap();
        alpha_bar.push(prev * (1.0 - b));
    }
    Ok(NoiseSchedule { beta_min, beta_max, betas, alpha_bar })
}

impl NoiseSchedule {
    pub fn desk() -> Self {
        make_schedule(DEFAULT_STEPS, DEFAULT_BETA_MIN, DEFAULT_BETA_MAX).expect("valid defaults")
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta_range(&self) -> (f64, f64) {
        (self.beta_min, self.beta_max)
    }

    /// `beta_t` for `t` in `1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    /// Signal factor `sqrt(alpha_bar_t)`.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha_bar[t].sqrt()
    }

    /// Noise factor `sqrt(1 - alpha_bar_t)`.
    pub fn sigma(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar[t]).sqrt()
    }

    /// `alpha^2 / sigma^2`; `+inf` at `t = 0`.
    pub fn snr(&self, t: usize) -> f64 {
        let ab = self.alpha_bar[t];
        if ab >= 1.0 {
            f64::INFINITY
        } else {
            ab / (1.0 - ab)
        }
    }

    pub fn lambda_dir(&self, t: usize, lambda_max: f64) -> f64 {
        lambda_from_snr(self.snr(t), lambda_max)
    }

    /// Variance of the ancestral posterior `q(x_{t-1} | x_t, x_0)`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        self.beta(t) * (1.0 - self.alpha_bar[t - 1]) / (1.0 - self.alpha_bar[t])
    }

    /// Coefficients `(c0, ct)` of the posterior mean `c0 x_0 + ct x_t`.
    pub fn posterior_coefficients(&self, t: usize) -> (f64, f64) {
        let b = self.beta(t);
        let (ab, ab_prev) = (self.alpha_bar[t], self.alpha_bar[t - 1]);
        (ab_prev.sqrt() * b / (1.0 - ab), (1.0 - b).sqrt() * (1.0 - ab_prev) / (1.0 - ab))
    }
}

/// `lambda_max * SNR / (SNR + 1)`, saturating at `lambda_max` for infinite SNR.
pub fn lambda_from_snr(snr: f64, lambda_max: f64) -> f64 {
    if snr.is_infinite() {
        lambda_max
    } else {
        lambda_max * (snr / (snr + 1.0))
    }
}
