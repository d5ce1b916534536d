//! Dataset generation, shift analysis and evaluation glue shared by the CLI
//! and the end-to-end tests.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::diffuse::data::{HeadMode, NormStats, TrainItem};
use crate::diffuse::sample::sample;
use crate::diffuse::train::TrainState;
use crate::diffuse::Conditioning;
use crate::envgrid::{generate_scene, generate_scene_group, Scene, SceneParams};
use crate::error::{Error, Result};
use crate::featspace::{estimate_shift, FeatureEncoder, ShiftEstimate, ShiftGeometry};
use crate::formats::PairedSample;
use crate::metrics::{evaluate_pair, MetricsReport};
use crate::propagate::{solve, solve_mp};
use crate::radiomap::RadioMap;

/// Multipath scenes draw seeds from a range disjoint from main-path scenes.
pub const MU_SEED_OFFSET: u64 = 1_000_000;

/// Main-path training set: scene `i` uses seed `base_seed + i`.
pub fn generate_mp_set(
    base_seed: u64,
    count: usize,
    params: &SceneParams,
    reflections: usize,
) -> Result<Vec<(Scene, RadioMap)>> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let scene = generate_scene(base_seed.wrapping_add(i as u64), params)?;
            let mp = solve_mp(&scene, reflections)?;
            Ok((scene, mp))
        })
        .collect()
}

/// Paired set: layout `j` uses seed `base_seed + MU_SEED_OFFSET + j` and
/// contributes `tx_per_scene` transmitter placements.
pub fn generate_pair_set(
    base_seed: u64,
    scenes: usize,
    tx_per_scene: usize,
    params: &SceneParams,
    reflections: usize,
) -> Result<Vec<PairedSample>> {
    let groups: Vec<Vec<PairedSample>> = (0..scenes)
        .into_par_iter()
        .map(|j| {
            let seed = base_seed.wrapping_add(MU_SEED_OFFSET).wrapping_add(j as u64);
            generate_scene_group(seed, params, tx_per_scene)?
                .into_iter()
                .map(|scene| {
                    let maps = solve(&scene, reflections)?;
                    Ok(PairedSample { mp: maps.mp, mu: maps.mu, scene })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(groups.into_iter().flatten().collect())
}

/// Keeps the first transmitter placement of every layout.
pub fn one_shot_subset(pairs: &[PairedSample]) -> Vec<PairedSample> {
    let mut seen = std::collections::BTreeSet::new();
    pairs.iter().filter(|p| seen.insert(p.scene.seed)).cloned().collect()
}

/// Main-path and multipath maps in normalized units.
pub fn normalized_pairs(norm: &NormStats, pairs: &[PairedSample]) -> Vec<(RadioMap, RadioMap)> {
    pairs.iter().map(|p| (norm.normalize_map(&p.mp), norm.normalize_map(&p.mu))).collect()
}

/// Shift geometry of the feature differences, measured on normalized maps.
pub fn estimate_geometry<E: FeatureEncoder + ?Sized>(
    enc: &E,
    norm: &NormStats,
    pairs: &[PairedSample],
) -> Result<ShiftEstimate> {
    estimate_shift(enc, &normalized_pairs(norm, pairs))
}

/// Fine-tuning items, each carrying its own measured shift magnitude.
pub fn finetune_items(
    pairs: &[PairedSample],
    norm: &NormStats,
    mode: HeadMode,
    geometry: &ShiftGeometry,
) -> Result<Vec<TrainItem>> {
    if geometry.per_sample_eta.len() != pairs.len() {
        return Err(Error::Config(format!(
            "geometry lists {} shift magnitudes for {} pairs",
            geometry.per_sample_eta.len(),
            pairs.len()
        )));
    }
    Ok(pairs
        .iter()
        .zip(&geometry.per_sample_eta)
        .map(|(p, &eta)| TrainItem::paired(&p.scene, &p.mp, &p.mu, norm, mode, eta))
        .collect())
}

fn clamp_unit(width: usize, height: usize, x: &[f64]) -> Result<RadioMap> {
    RadioMap::from_values(width, height, x.iter().map(|v| v.clamp(0.0, 1.0)).collect())
}

/// Samples one map per case and scores it against the normalized target.
///
/// Case `j` always draws from stream `j` of the `seed` generator, so two
/// models evaluated with the same seed see identical sampler noise.
pub fn evaluate(state: &TrainState, cases: &[(&Scene, &RadioMap)], seed: u64) -> Result<MetricsReport> {
    Ok(evaluate_with_samples(state, cases, seed)?.0)
}

/// Like [`evaluate`], also returning the normalized samples clamped to `[0, 1]`.
pub fn evaluate_with_samples(
    state: &TrainState,
    cases: &[(&Scene, &RadioMap)],
    seed: u64,
) -> Result<(MetricsReport, Vec<RadioMap>)> {
    let scored = cases
        .par_iter()
        .enumerate()
        .map(|(j, (scene, target))| {
            let cond = Conditioning::from_scene(scene);
            if target.width() != cond.width || target.height() != cond.height {
                return Err(Error::arg("evaluation target does not match its scene"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(j as u64);
            let x = sample(&state.params, &cond, &state.schedule, &mut rng)?;
            let y = clamp_unit(cond.width, cond.height, &state.norm.normalize(target))?;
            let y_hat = clamp_unit(cond.width, cond.height, &x)?;
            Ok((evaluate_pair(&y, &y_hat)?, y_hat))
        })
        .collect::<Result<Vec<_>>>()?;
    let (metrics, maps): (Vec<_>, Vec<_>) = scored.into_iter().unzip();
    Ok((MetricsReport::from_samples(metrics)?, maps))
}

/// Multipath evaluation cases of a paired set.
pub fn mu_cases(pairs: &[PairedSample]) -> Vec<(&Scene, &RadioMap)> {
    pairs.iter().map(|p| (&p.scene, &p.mu)).collect()
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
