use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::data::Conditioning;
use super::loss::{predict_x0, NoiseModel};
use super::schedule::NoiseSchedule;
use super::train::TrainState;
use crate::envgrid::Scene;
use crate::error::{Error, Result};
use crate::radiomap::RadioMap;

/// Ancestral reverse pass from `x_T ~ N(0, I)` down to `t = 0`.
///
/// Returns the normalized map: the single head, or the sum of the heads in
/// split mode.
pub fn sample<M: NoiseModel + ?Sized, R: Rng>(
    model: &M,
    cond: &Conditioning,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let n = cond.len();
    let heads = model.heads();
    let mut x: Vec<f64> = (0..heads * n).map(|_| StandardNormal.sample(rng)).collect();
    for t in (1..=sched.steps()).rev() {
        let eps_hat = model.predict(&x, t, cond)?;
        let x0 = predict_x0(&x, &eps_hat, t, sched)?;
        let (c0, ct) = sched.posterior_coefficients(t);
        let std = sched.posterior_variance(t).sqrt();
        for (xi, x0i) in x.iter_mut().zip(&x0) {
            let mean = c0 * x0i + ct * *xi;
            *xi = if t > 1 {
                let z: f64 = StandardNormal.sample(rng);
                mean + std * z
            } else {
                mean
            };
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("sampler produced non-finite values at step {t}")));
        }
    }
    let mut out = x[..n].to_vec();
    for hd in 1..heads {
        for (o, v) in out.iter_mut().zip(&x[hd * n..(hd + 1) * n]) {
            *o += v;
        }
    }
    Ok(out)
}

/// Samples a map for `scene` and converts it back to linear power (clamped at 0).
pub fn sample_map<R: Rng>(state: &TrainState, scene: &Scene, rng: &mut R) -> Result<RadioMap> {
    let cond = Conditioning::from_scene(scene);
    let x = sample(&state.params, &cond, &state.schedule, rng)?;
    state.norm.denormalize(cond.width, cond.height, &x)
}
