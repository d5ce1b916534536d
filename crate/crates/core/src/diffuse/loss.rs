//! Forward noising, clean-sample prediction and the training objectives.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::data::{Conditioning, TrainItem};
use super::net::{backward, forward, Cache, DenoiserParams};
use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::featspace::{dcl_finetune_with_grad, FeatureEncoder, ShiftGeometry};
use crate::numeric::{pairwise_sum, sub};

/// Bounds applied to the predicted clean sample.
pub const X0_CLAMP: (f64, f64) = (-0.1, 1.1);
const MIN_SIGNAL: f64 = 1e-8;

/// `x_t = alpha(t) x0 + sigma(t) eps`.
pub fn forward_sample(x0: &[f64], t: usize, eps: &[f64], sched: &NoiseSchedule) -> Result<Vec<f64>> {
    if x0.len() != eps.len() {
        return Err(Error::arg(format!("x0 has {} entries but noise has {}", x0.len(), eps.len())));
    }
    if t > sched.steps() {
        return Err(Error::arg(format!("step {t} outside 0..={}", sched.steps())));
    }
    let (a, s) = (sched.alpha(t), sched.sigma(t));
    Ok(x0.iter().zip(eps).map(|(x, e)| a * x + s * e).collect())
}

/// Unclamped inversion `(x_t - sigma eps_hat) / alpha`.
pub fn predict_x0_raw(x_t: &[f64], eps_hat: &[f64], t: usize, sched: &NoiseSchedule) -> Result<Vec<f64>> {
    if x_t.len() != eps_hat.len() {
        return Err(Error::arg("x_t and the noise estimate differ in length"));
    }
    let a = sched.alpha(t);
    if a < MIN_SIGNAL {
        return Err(Error::Numeric(format!("signal factor {a:e} at step {t} is too small to invert")));
    }
    let s = sched.sigma(t);
    Ok(x_t.iter().zip(eps_hat).map(|(x, e)| (x - s * e) / a).collect())
}

/// Clean-sample estimate clamped to `X0_CLAMP`.
pub fn predict_x0(x_t: &[f64], eps_hat: &[f64], t: usize, sched: &NoiseSchedule) -> Result<Vec<f64>> {
    Ok(predict_x0_raw(x_t, eps_hat, t, sched)?.into_iter().map(|v| v.clamp(X0_CLAMP.0, X0_CLAMP.1)).collect())
}

/// Anything that predicts the injected noise, one plane per head.
pub trait NoiseModel {
    fn heads(&self) -> usize;
    fn predict(&self, x_t: &[f64], t: usize, cond: &Conditioning) -> Result<Vec<f64>>;
}

impl NoiseModel for DenoiserParams {
    fn heads(&self) -> usize {
        self.arch.heads
    }

    fn predict(&self, x_t: &[f64], t: usize, cond: &Conditioning) -> Result<Vec<f64>> {
        if cond.width != self.arch.width || cond.height != self.arch.height {
            return Err(Error::arg("conditioning does not match the network input size"));
        }
        if x_t.len() != self.arch.heads * self.arch.pixels() {
            return Err(Error::arg("noisy input does not match the network head count"));
        }
        Ok(forward(&self.arch, &self.effective(), x_t, t, cond, None))
    }
}

/// One element of a training batch: which item, which step, which noise.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseDraw {
    pub item: usize,
    pub t: usize,
    pub eps: Vec<f64>,
}

/// Uniform item and step choice with standard normal noise.
pub fn draw_noise<R: Rng>(
    rng: &mut R,
    items: &[TrainItem],
    batch: usize,
    sched: &NoiseSchedule,
) -> Result<Vec<NoiseDraw>> {
    if items.is_empty() {
        return Err(Error::arg("training set is empty"));
    }
    Ok((0..batch)
        .map(|_| {
            let item = rng.gen_range(0..items.len());
            let t = rng.gen_range(1..=sched.steps());
            let eps = (0..items[item].x0.len()).map(|_| StandardNormal.sample(rng)).collect();
            NoiseDraw { item, t, eps }
        })
        .collect())
}

/// Frozen direction regularizer: encoder, shift geometry and weights.
pub struct DirectionTerm<'a> {
    encoder: &'a dyn FeatureEncoder,
    v: Vec<f64>,
    beta: f64,
    lambda_max: f64,
    mp_features: Vec<Vec<f64>>,
}

impl<'a> DirectionTerm<'a> {
    pub fn new(
        encoder: &'a dyn FeatureEncoder,
        geometry: &ShiftGeometry,
        beta: f64,
        lambda_max: f64,
        items: &[TrainItem],
    ) -> Result<Self> {
        geometry.validate()?;
        if geometry.dim() != encoder.dim() {
            return Err(Error::Config(format!(
                "shift geometry has dimension {}, encoder produces {}",
                geometry.dim(),
                encoder.dim()
            )));
        }
        if !(beta >= 0.0 && lambda_max >= 0.0) {
            return Err(Error::Config("beta and lambda_max must be nonnegative".into()));
        }
        let mp_features = items.iter().map(|it| encoder.encode(&it.x0_mp)).collect::<Result<Vec<_>>>()?;
        Ok(DirectionTerm { encoder, v: geometry.v.clone(), beta, lambda_max, mp_features })
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }
}

/// Which parts of the objective to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Terms {
    Base,
    Direction,
    Total,
}

/// Value of one batch objective and its parts, each averaged over the batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Objective {
    pub value: f64,
    pub base: f64,
    /// `lambda_dir`-weighted direction term.
    pub direction: f64,
}

struct ItemResult {
    base: f64,
    direction: f64,
    d_eps: Vec<f64>,
}

/// Per-item loss and its derivative with respect to the predicted noise.
fn item_objective(
    item: &TrainItem,
    mp_feature: Option<&[f64]>,
    draw: &NoiseDraw,
    x_t: &[f64],
    eps_hat: &[f64],
    sched: &NoiseSchedule,
    term: Option<&DirectionTerm>,
    terms: Terms,
) -> Result<ItemResult> {
    let m = eps_hat.len();
    let mut d_eps = vec![0.0; m];
    let mut base = 0.0;
    if terms != Terms::Direction {
        let sq: Vec<f64> = eps_hat.iter().zip(&draw.eps).map(|(a, b)| (a - b) * (a - b)).collect();
        base = pairwise_sum(&sq) / m as f64;
        for (g, (a, b)) in d_eps.iter_mut().zip(eps_hat.iter().zip(&draw.eps)) {
            *g = 2.0 * (a - b) / m as f64;
        }
    }
    let mut direction = 0.0;
    if let (Some(term), true) = (term, terms != Terms::Base) {
        let lambda = sched.lambda_dir(draw.t, term.lambda_max);
        if term.lambda_max > 0.0 {
            let raw = predict_x0_raw(x_t, eps_hat, draw.t, sched)?;
            let n = item.x0_mp.len();
            let heads = m / n;
            let mut x0_hat = vec![0.0; n];
            for hd in 0..heads {
                for (dst, &r) in x0_hat.iter_mut().zip(&raw[hd * n..(hd + 1) * n]) {
                    *dst += r.clamp(X0_CLAMP.0, X0_CLAMP.1);
                }
            }
            let feat = term.encoder.encode(&x0_hat)?;
            let dh = sub(&feat, mp_feature.expect("features cached for every item"));
            let (loss, g_feat) = dcl_finetune_with_grad(&dh, &term.v, item.eta, term.beta)?;
            direction = lambda * loss;
            let g_field = term.encoder.pullback(&x0_hat, &g_feat)?;
            let k = -lambda * sched.sigma(draw.t) / sched.alpha(draw.t);
            for hd in 0..heads {
                for p in 0..n {
                    let r = raw[hd * n + p];
                    if r > X0_CLAMP.0 && r < X0_CLAMP.1 {
                        d_eps[hd * n + p] += k * g_field[p];
                    }
                }
            }
        }
    }
    Ok(ItemResult { base, direction, d_eps })
}

fn check_batch(items: &[TrainItem], draws: &[NoiseDraw], heads: usize) -> Result<()> {
    if draws.is_empty() {
        return Err(Error::arg("batch is empty"));
    }
    for d in draws {
        let item = items.get(d.item).ok_or_else(|| Error::arg("noise draw refers to a missing item"))?;
        if item.x0.len() != d.eps.len() || item.heads() != heads {
            return Err(Error::arg("noise draw does not match the item or head count"));
        }
    }
    Ok(())
}

fn combine(results: &[ItemResult]) -> Objective {
    let b = results.len() as f64;
    let base = pairwise_sum(&results.iter().map(|r| r.base).collect::<Vec<_>>()) / b;
    let direction = pairwise_sum(&results.iter().map(|r| r.direction).collect::<Vec<_>>()) / b;
    Objective { value: base + direction, base, direction }
}

/// Objective value for any noise model (no gradients).
pub fn objective_value<M: NoiseModel + ?Sized>(
    model: &M,
    items: &[TrainItem],
    draws: &[NoiseDraw],
    sched: &NoiseSchedule,
    term: Option<&DirectionTerm>,
    terms: Terms,
) -> Result<Objective> {
    check_batch(items, draws, model.heads())?;
    let results = draws
        .iter()
        .map(|d| {
            let item = &items[d.item];
            let x_t = forward_sample(&item.x0, d.t, &d.eps, sched)?;
            let eps_hat = model.predict(&x_t, d.t, &item.cond)?;
            let mp = term.map(|t| t.mp_features[d.item].as_slice());
            item_objective(item, mp, d, &x_t, &eps_hat, sched, term, terms)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(combine(&results))
}

/// Gradients of the objective: with respect to the effective weights and,
/// when adapters are present, with respect to their factors.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub effective: Vec<f64>,
    pub adapters: Option<Vec<f64>>,
}

pub fn objective_with_grad(
    params: &DenoiserParams,
    items: &[TrainItem],
    draws: &[NoiseDraw],
    sched: &NoiseSchedule,
    term: Option<&DirectionTerm>,
    terms: Terms,
) -> Result<(Objective, Gradient)> {
    check_batch(items, draws, params.arch.heads)?;
    let weights = params.effective();
    let b = draws.len() as f64;
    let mut grad = vec![0.0; weights.len()];
    let mut cache = Cache::default();
    let mut results = Vec::with_capacity(draws.len());
    for d in draws {
        let item = &items[d.item];
        if item.cond.width != params.arch.width || item.cond.height != params.arch.height {
            return Err(Error::arg("training item does not match the network input size"));
        }
        let x_t = forward_sample(&item.x0, d.t, &d.eps, sched)?;
        let eps_hat = forward(&params.arch, &weights, &x_t, d.t, &item.cond, Some(&mut cache));
        let mp = term.map(|t| t.mp_features[d.item].as_slice());
        let mut r = item_objective(item, mp, d, &x_t, &eps_hat, sched, term, terms)?;
        r.d_eps.iter_mut().for_each(|g| *g /= b);
        backward(&params.arch, &weights, &cache, &r.d_eps, &mut grad);
        results.push(r);
    }
    let adapters = params.adapter_gradient(&grad);
    Ok((combine(&results), Gradient { effective: grad, adapters }))
}

/// Mean squared noise-prediction error over batch, heads and pixels.
pub fn loss_base<M: NoiseModel + ?Sized>(
    model: &M,
    items: &[TrainItem],
    draws: &[NoiseDraw],
    sched: &NoiseSchedule,
) -> Result<f64> {
    Ok(objective_value(model, items, draws, sched, None, Terms::Base)?.value)
}

/// Base loss plus the SNR-weighted direction loss on the predicted clean sample.
pub fn loss_total<M: NoiseModel + ?Sized>(
    model: &M,
    items: &[TrainItem],
    draws: &[NoiseDraw],
    sched: &NoiseSchedule,
    term: &DirectionTerm,
) -> Result<f64> {
    Ok(objective_value(model, items, draws, sched, Some(term), Terms::Total)?.value)
}
