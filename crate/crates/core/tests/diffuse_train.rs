use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use radiomap_core::diffuse::data::time_embedding;
mod common;

use common::gradcheck::{self, Target};
use radiomap_core::diffuse::loss::{draw_noise, forward_sample, objective_value, NoiseDraw};
use radiomap_core::diffuse::net::forward;
use radiomap_core::diffuse::*;
use radiomap_core::envgrid::{OccupancyGrid, Scene, Transmitter};
use radiomap_core::featspace::{estimate_shift, LinearEncoder, ShiftGeometry};
use radiomap_core::RadioMap;

const W: usize = 12;
const H: usize = 10;

fn scene(k: usize) -> Scene {
    let mut g = OccupancyGrid::empty(W, H, 1.0).unwrap();
    g.fill_rect(4 + k % 3, 3, 7 + k % 3, 6);
    Scene::new(g, Transmitter::at(1.5 + 0.3 * k as f64, 1.5 + 0.5 * k as f64), k as u64, "t").unwrap()
}

struct Fixture {
    pairs: Vec<(Scene, RadioMap, RadioMap)>,
    norm: NormStats,
    enc: LinearEncoder,
}

fn fixture(n: usize) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let pairs: Vec<_> = (0..n)
        .map(|k| {
            let mp: Vec<f64> = (0..W * H).map(|_| 10f64.powf(-6.0 * rng.gen::<f64>())).collect();
            let mu: Vec<f64> = mp.iter().map(|v| v * (1.0 + 2.0 * rng.gen::<f64>())).collect();
            (scene(k), RadioMap::from_values(W, H, mp).unwrap(), RadioMap::from_values(W, H, mu).unwrap())
        })
        .collect();
    let norm = NormStats::from_maps(pairs.iter().map(|p| &p.2)).unwrap();
    let enc = LinearEncoder::new(W, H, 3, 6, 2).unwrap();
    Fixture { pairs, norm, enc }
}

impl Fixture {
    fn geometry(&self) -> ShiftGeometry {
        let normed: Vec<_> =
            self.pairs.iter().map(|(_, mp, mu)| (self.norm.normalize_map(mp), self.norm.normalize_map(mu))).collect();
        estimate_shift(&self.enc, &normed).unwrap().geometry
    }

    fn items(&self, mode: HeadMode, geom: &ShiftGeometry) -> Vec<TrainItem> {
        self.pairs
            .iter()
            .zip(&geom.per_sample_eta)
            .map(|((s, mp, mu), &eta)| TrainItem::paired(s, mp, mu, &self.norm, mode, eta))
            .collect()
    }
}

fn schedule() -> NoiseSchedule {
    make_schedule(30, 1e-3, 0.05).unwrap()
}

/// Central differences on three 32-entry slices of the trainable vector.
fn fd_check(params: &DenoiserParams, items: &[TrainItem], draws: &[NoiseDraw], term: Option<&DirectionTerm>, terms: Terms, target: Target) {
    let sched = schedule();
    let len = gradcheck::trainable_len(params, target);
    let problem = gradcheck::Problem { params, items, draws, sched: &sched, term, terms };
    let worst = gradcheck::worst_slice_error(&problem, target, &[0, len / 2 - 16, len - 32], 32);
    assert!(worst <= 1e-4, "{target:?} {terms:?}: worst relative error {worst}");
}

fn setup(mode: HeadMode, adapters: bool) -> (Fixture, ShiftGeometry, DenoiserParams, Vec<TrainItem>, Vec<NoiseDraw>) {
    let fx = fixture(4);
    let geom = fx.geometry();
    let items = fx.items(mode, &geom);
    let arch = Architecture::new(W, H, mode.heads()).unwrap();
    let mut params = DenoiserParams::init(arch, 8);
    if adapters {
        params = params.with_adapters(2, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for v in &mut params.adapters.as_mut().unwrap().factors {
            *v += 0.05 * rng.gen::<f64>();
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let draws = draw_noise(&mut rng, &items, 3, &schedule()).unwrap();
    (fx, geom, params, items, draws)
}

#[test]
fn base_loss_gradient_matches_finite_differences() {
    for mode in [HeadMode::Single, HeadMode::Split] {
        let (_, _, params, items, draws) = setup(mode, false);
        fd_check(&params, &items, &draws, None, Terms::Base, Target::Base);
    }
}

#[test]
fn direction_and_total_gradients_match_finite_differences() {
    for mode in [HeadMode::Single, HeadMode::Split] {
        let (fx, geom, params, items, draws) = setup(mode, false);
        let term = DirectionTerm::new(&fx.enc, &geom, 0.7, 0.4, &items).unwrap();
        let obj = objective_value(&params, &items, &draws, &schedule(), Some(&term), Terms::Direction).unwrap();
        assert!(obj.direction > 0.0);
        fd_check(&params, &items, &draws, Some(&term), Terms::Direction, Target::Base);
        fd_check(&params, &items, &draws, Some(&term), Terms::Total, Target::Base);
    }
}

#[test]
fn adapter_gradients_match_finite_differences() {
    let (fx, geom, params, items, draws) = setup(HeadMode::Single, true);
    let term = DirectionTerm::new(&fx.enc, &geom, 0.7, 0.4, &items).unwrap();
    fd_check(&params, &items, &draws, None, Terms::Base, Target::Adapters);
    fd_check(&params, &items, &draws, Some(&term), Terms::Direction, Target::Adapters);
    fd_check(&params, &items, &draws, Some(&term), Terms::Total, Target::Adapters);
}

#[test]
fn forward_noising_has_the_expected_moments() {
    let sched = NoiseSchedule::desk();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x0 = [0.8];
    for t in [1, 50, 200] {
        let draws: Vec<f64> = (0..10_000)
            .map(|_| {
                let e: f64 = StandardNormal.sample(&mut rng);
                forward_sample(&x0, t, &[e], &sched).unwrap()[0]
            })
            .collect();
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let (a, s) = (sched.alpha(t), sched.sigma(t));
        assert!((mean - a * 0.8).abs() < 5.0 * s / n.sqrt(), "t={t} mean {mean}");
        // Standard error of a normal sample variance is sigma^2 sqrt(2/(n-1)).
        assert!((var - s * s).abs() < 5.0 * s * s * (2.0 / (n - 1.0)).sqrt(), "t={t} var {var}");
    }
}

#[test]
fn zero_network_has_unit_noise_loss() {
    let fx = fixture(4);
    let geom = fx.geometry();
    let items = fx.items(HeadMode::Single, &geom);
    let params = DenoiserParams::zeros(Architecture::new(W, H, 1).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let sched = schedule();
    let draws = draw_noise(&mut rng, &items, 64, &sched).unwrap();
    let l = loss_base(&params, &items, &draws, &sched).unwrap();
    let samples = (64 * W * H) as f64;
    assert!((l - 1.0).abs() < 5.0 * (2.0 / samples).sqrt(), "loss {l}");
}

/// Direct per-pixel dilated convolution.
fn naive_forward(params: &DenoiserParams, x_t: &[f64], t: usize, cond: &Conditioning) -> Vec<f64> {
    let arch = &params.arch;
    let layout = arch.layout();
    let w = &params.base;
    let n = W * H;
    let embed = time_embedding(t);
    let mut act: Vec<f64> = x_t.iter().chain(&cond.channels).copied().collect();
    for (l, c) in layout.convs.iter().enumerate() {
        let d = c.dilation as isize;
        let mut out = vec![0.0; c.cout * n];
        for co in 0..c.cout {
            let mut shift = w[c.bias + co];
            if l < layout.time.len() {
                for (k, e) in embed.iter().enumerate() {
                    shift += w[layout.time[l] + co * embed.len() + k] * e;
                }
            }
            for y in 0..H as isize {
                for x in 0..W as isize {
                    let mut s = shift;
                    for ci in 0..c.cin {
                        for ky in 0..3isize {
                            for kx in 0..3isize {
                                let (sy, sx) = (y + (ky - 1) * d, x + (kx - 1) * d);
                                if sy < 0 || sx < 0 || sy >= H as isize || sx >= W as isize {
                                    continue;
                                }
                                let wv = w[c.weight + ((co * c.cin + ci) * 3 + ky as usize) * 3 + kx as usize];
                                s += wv * act[ci * n + sy as usize * W + sx as usize];
                            }
                        }
                    }
                    out[co * n + y as usize * W + x as usize] = s;
                }
            }
        }
        let last = l == layout.convs.len() - 1;
        act = if last { out } else { out.iter().map(|v| v / (1.0 + (-v).exp())).collect() };
    }
    act
}

#[test]
fn forward_matches_a_naive_convolution() {
    for heads in [1, 2] {
        let params = DenoiserParams::init(Architecture::new(W, H, heads).unwrap(), 13);
        let cond = Conditioning::from_scene(&scene(1));
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x: Vec<f64> = (0..heads * W * H).map(|_| StandardNormal.sample(&mut rng)).collect();
        for t in [1, 17, 200] {
            let fast = forward(&params.arch, &params.base, &x, t, &cond, None);
            let slow = naive_forward(&params, &x, t, &cond);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
            }
        }
    }
}

fn pretrain_items() -> (NormStats, Vec<TrainItem>) {
    let fx = fixture(6);
    let items = fx.pairs.iter().map(|(s, mp, _)| TrainItem::main_path(s, mp, &fx.norm)).collect();
    (fx.norm, items)
}

#[test]
fn pretraining_is_deterministic() {
    let (norm, items) = pretrain_items();
    let state = TrainState::new(Architecture::new(W, H, 1).unwrap(), norm, schedule(), 1);
    let cfg = TrainConfig::pretrain(15, 4, 2);
    let a = pretrain(state.clone(), &cfg, &items).unwrap();
    let b = pretrain(state.clone(), &cfg, &items).unwrap();
    assert_eq!(encode_checkpoint(&a).unwrap(), encode_checkpoint(&b).unwrap());
    assert_ne!(a.params, state.params);
    assert_eq!(a.step, 15);

    let idle = pretrain(state.clone(), &TrainConfig::pretrain(0, 4, 2), &items).unwrap();
    assert_eq!(idle.params, state.params);
}

#[test]
fn lora_finetune_freezes_the_base_weights() {
    let fx = fixture(4);
    let geom = fx.geometry();
    let items = fx.items(HeadMode::Single, &geom);
    let state = TrainState::new(Architecture::new(W, H, 1).unwrap(), fx.norm, schedule(), 1);
    let reg = Regularizer { encoder: &fx.enc, geometry: &geom, lambda_max: 0.4, beta: 1.0 };
    let tuned = finetune(state.clone(), &TrainConfig::finetune(10, 2, 3), &items, &reg, TuneMode::Lora { rank: 4 }).unwrap();
    assert_eq!(tuned.params.base, state.params.base);
    let ad = tuned.params.adapters.as_ref().unwrap();
    assert_eq!(ad.rank, 4);
    assert!(ad.factors.iter().any(|&v| v != 0.0));
    let rows_b: f64 = ad.slots(&tuned.params.arch.layout()).iter().map(|s| {
        ad.factors[s.b..s.b + s.rows * ad.rank].iter().map(|v| v.abs()).sum::<f64>()
    }).sum();
    assert!(rows_b > 0.0, "B factors never moved");

    let full = finetune(state.clone(), &TrainConfig::finetune(10, 2, 3), &items, &reg, TuneMode::Full).unwrap();
    assert_ne!(full.params.base, state.params.base);
    assert!(full.params.adapters.is_none());
}

#[test]
fn one_shot_finetune_writes_a_valid_checkpoint() {
    let fx = fixture(1);
    let geom = fx.geometry();
    let items = fx.items(HeadMode::Single, &geom);
    let state = TrainState::new(Architecture::new(W, H, 1).unwrap(), fx.norm, schedule(), 1);
    let reg = Regularizer { encoder: &fx.enc, geometry: &geom, lambda_max: 0.4, beta: 1.0 };
    let tuned = finetune(state, &TrainConfig::finetune(5, 1, 3), &items, &reg, TuneMode::Full).unwrap();
    let back = decode_checkpoint(&encode_checkpoint(&tuned).unwrap()).unwrap();
    assert_eq!(back.params, tuned.params);
}

#[test]
fn lambda_zero_reproduces_the_base_training_run() {
    let fx = fixture(4);
    let geom = fx.geometry();
    let items = fx.items(HeadMode::Single, &geom);
    let state = TrainState::new(Architecture::new(W, H, 1).unwrap(), fx.norm, schedule(), 1);
    let reg = Regularizer { encoder: &fx.enc, geometry: &geom, lambda_max: 0.0, beta: 1.0 };
    let cfg = TrainConfig::finetune(8, 2, 3);
    let tuned = finetune(state.clone(), &cfg, &items, &reg, TuneMode::Full).unwrap();
    let plain = pretrain(state, &cfg, &items).unwrap();
    assert_eq!(tuned.params.base, plain.params.base);
    assert_eq!(tuned.loss_history, plain.loss_history);
}
