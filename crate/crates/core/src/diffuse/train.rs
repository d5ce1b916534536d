//! Adam training loops for pretraining and few-shot fine-tuning.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::data::{NormStats, TrainItem};
use super::loss::{draw_noise, objective_with_grad, DirectionTerm, Terms};
use super::net::{Architecture, DenoiserParams};
use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::featspace::{FeatureEncoder, ShiftGeometry};

pub const PRETRAIN_LR: f64 = 1e-3;
pub const FINETUNE_LR: f64 = 1e-4;
pub const CLIP_NORM: f64 = 1.0;
pub const DIVERGENCE_FACTOR: f64 = 1e3;
pub const DEFAULT_LORA_RANK: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Rescales `grad` in place to global norm at most `max_norm`; returns the original norm.
pub fn clip_global_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub clip: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn pretrain(steps: usize, batch: usize, seed: u64) -> Self {
        TrainConfig { steps, batch, lr: PRETRAIN_LR, clip: CLIP_NORM, seed }
    }

    pub fn finetune(steps: usize, batch: usize, seed: u64) -> Self {
        TrainConfig { steps, batch, lr: FINETUNE_LR, clip: CLIP_NORM, seed }
    }

    fn validate(&self) -> Result<()> {
        if self.batch == 0 || !(self.lr > 0.0) || !(self.clip > 0.0) {
            return Err(Error::Config("batch size, learning rate and clip norm must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TuneMode {
    Full,
    Lora { rank: usize },
}

/// Model, data normalization and optimizer progress.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: DenoiserParams,
    pub norm: NormStats,
    pub schedule: NoiseSchedule,
    pub optimizer: Option<Adam>,
    pub step: usize,
    pub loss_history: Vec<f64>,
}

impl TrainState {
    /// Freshly initialized network.
    pub fn new(arch: Architecture, norm: NormStats, schedule: NoiseSchedule, seed: u64) -> Self {
        TrainState {
            params: DenoiserParams::init(arch, seed),
            norm,
            schedule,
            optimizer: None,
            step: 0,
            loss_history: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Trainable {
    Base,
    Adapters,
}

fn run(
    mut state: TrainState,
    cfg: &TrainConfig,
    items: &[TrainItem],
    term: Option<&DirectionTerm>,
    trainable: Trainable,
) -> Result<TrainState> {
    cfg.validate()?;
    if cfg.steps == 0 {
        return Ok(state);
    }
    if items.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let terms = if term.is_some() { Terms::Total } else { Terms::Base };
    let len = match trainable {
        Trainable::Base => state.params.base.len(),
        Trainable::Adapters => state.params.adapters.as_ref().map_or(0, |a| a.factors.len()),
    };
    let mut opt = match state.optimizer.take() {
        Some(o) if o.m.len() == len => o,
        _ => Adam::new(len),
    };
    let mut initial = None;
    for _ in 0..cfg.steps {
        let draws = draw_noise(&mut rng, items, cfg.batch, &state.schedule)?;
        let (obj, grad) = objective_with_grad(&state.params, items, &draws, &state.schedule, term, terms)?;
        let first = *initial.get_or_insert(obj.value);
        if !obj.value.is_finite() || obj.value > DIVERGENCE_FACTOR * first {
            return Err(Error::Training(format!(
                "loss {} at step {} exceeds {DIVERGENCE_FACTOR}x the initial {first}",
                obj.value, state.step
            )));
        }
        let (target, mut g) = match trainable {
            Trainable::Base => (&mut state.params.base, grad.effective),
            Trainable::Adapters => (
                &mut state.params.adapters.as_mut().expect("adapter mode has adapters").factors,
                grad.adapters.expect("adapter gradient present"),
            ),
        };
        clip_global_norm(&mut g, cfg.clip);
        opt.step(target, &g, cfg.lr);
        state.loss_history.push(obj.value);
        state.step += 1;
    }
    state.optimizer = Some(opt);
    Ok(state)
}

/// Trains every base weight on the denoising loss.
pub fn pretrain(state: TrainState, cfg: &TrainConfig, items: &[TrainItem]) -> Result<TrainState> {
    run(state, cfg, items, None, Trainable::Base)
}

/// Direction-loss settings for fine-tuning.
pub struct Regularizer<'a> {
    pub encoder: &'a dyn FeatureEncoder,
    pub geometry: &'a ShiftGeometry,
    pub lambda_max: f64,
    pub beta: f64,
}

/// Fine-tunes on paired items. In LoRA mode the base weights are untouched
/// and only freshly added adapters are trained.
pub fn finetune(
    mut state: TrainState,
    cfg: &TrainConfig,
    items: &[TrainItem],
    reg: &Regularizer,
    mode: TuneMode,
) -> Result<TrainState> {
    let term = DirectionTerm::new(reg.encoder, reg.geometry, reg.beta, reg.lambda_max, items)?;
    state.optimizer = None;
    match mode {
        TuneMode::Full => {
            if state.params.adapters.is_some() {
                state.params.base = state.params.effective();
                state.params.adapters = None;
            }
            run(state, cfg, items, Some(&term), Trainable::Base)
        }
        TuneMode::Lora { rank } => {
            if state.params.adapters.is_some() {
                return Err(Error::Config("checkpoint already carries adapters".into()));
            }
            state.params = state.params.with_adapters(rank, cfg.seed ^ 0xada7_7e55)?;
            run(state, cfg, items, Some(&term), Trainable::Adapters)
        }
    }
}
