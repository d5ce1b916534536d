use radiomap_core::diffuse::loss::{objective_value, objective_with_grad, NoiseDraw};
use radiomap_core::diffuse::{DenoiserParams, DirectionTerm, NoiseSchedule, Terms, TrainItem};

#[derive(Clone, Copy, Debug)]
pub enum Target {
    Base,
    Adapters,
}

pub fn relative(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

pub struct Problem<'a> {
    pub params: &'a DenoiserParams,
    pub items: &'a [TrainItem],
    pub draws: &'a [NoiseDraw],
    pub sched: &'a NoiseSchedule,
    pub term: Option<&'a DirectionTerm<'a>>,
    pub terms: Terms,
}

/// Worst relative error between the analytic gradient and central
/// differences with step `1e-5` over `[s, s + width)` for every start `s`.
pub fn worst_slice_error(p: &Problem, target: Target, starts: &[usize], width: usize) -> f64 {
    let (_, grad) = objective_with_grad(p.params, p.items, p.draws, p.sched, p.term, p.terms).unwrap();
    let analytic = match target {
        Target::Base => grad.effective,
        Target::Adapters => grad.adapters.unwrap(),
    };
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for &s in starts {
        for i in s..(s + width).min(analytic.len()) {
            let eval = |delta: f64| {
                let mut q = p.params.clone();
                match target {
                    Target::Base => q.base[i] += delta,
                    Target::Adapters => q.adapters.as_mut().unwrap().factors[i] += delta,
                }
                objective_value(&q, p.items, p.draws, p.sched, p.term, p.terms).unwrap().value
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            worst = worst.max(relative(analytic[i], numeric));
        }
    }
    worst
}

pub fn trainable_len(params: &DenoiserParams, target: Target) -> usize {
    match target {
        Target::Base => params.base.len(),
        Target::Adapters => params.adapters.as_ref().map_or(0, |a| a.factors.len()),
    }
}
