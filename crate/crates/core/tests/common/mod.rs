#![allow(dead_code)]

pub mod gradcheck;
pub mod oracle;

use radiomap_core::envgrid::SceneParams;

/// Small layouts with at most two buildings, used for oracle comparisons.
pub fn oracle_params(size: usize) -> SceneParams {
    SceneParams {
        width: size,
        height: size,
        cell_size: 1.0,
        building_count: (1, 2),
        building_size: (3, 8.min(size - 4)),
        margin: 1,
        blocker_count: (0, 0),
        max_retries: 1000,
    }
}

/// Compares solver output against the sweep at every free cell; returns the
/// worst relative multipath error and the number of path-multiset mismatches.
pub fn compare_with_oracle(scene: &radiomap_core::envgrid::Scene, k: usize, samples: usize) -> (f64, usize) {
    use radiomap_core::propagate::{enumerate_paths, solve};
    let g = &scene.grid;
    let w = g.width();
    let found = oracle::AngularOracle::new(scene, k).sweep(samples);
    let maps = solve(scene, k).expect("solver");
    let mut worst = 0.0f64;
    let mut mismatches = 0;
    for (cell, paths) in found.iter().enumerate() {
        let (i, j) = (cell % w, cell / w);
        if g.is_occupied(i, j) {
            continue;
        }
        let expect = oracle::oracle_power(paths, scene.tx.power, g.cell_size());
        let got = maps.mu.values()[cell];
        let rel = (got - expect).abs() / expect.abs().max(f64::MIN_POSITIVE);
        if got != expect {
            worst = worst.max(rel);
        }
        let set = enumerate_paths(scene, g.cell_center(i, j), k).expect("free cell");
        let mut a: Vec<(usize, f64)> = set.paths.iter().map(|p| (p.reflections, p.length)).collect();
        let mut b: Vec<(usize, f64)> = paths.iter().map(|p| (p.reflections, p.length)).collect();
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let same = a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.0 == y.0 && (x.1 - y.1).abs() <= 1e-6);
        if !same {
            mismatches += 1;
        }
    }
    (worst, mismatches)
}

/// Map pairs whose encoded shifts follow `z_mu = z_mp + w_star + delta_i`
/// with `||delta_i|| <= 0.999 eta_star`, built through the encoder's right
/// inverse and lifted by one shared constant so every map is nonnegative.
pub fn translation_model_pairs(
    enc: &radiomap_core::featspace::LinearEncoder,
    n: usize,
    w_star: &[f64],
    eta_star: f64,
    seed: u64,
) -> Vec<(radiomap_core::RadioMap, radiomap_core::RadioMap)> {
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, StandardNormal};
    use radiomap_core::featspace::FeatureEncoder;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let d = w_star.len();
    let (width, height) = enc.input_shape();
    let mut raw = Vec::new();
    for _ in 0..n {
        let z_mp: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let dir: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        let r = 0.999 * eta_star * rng.gen::<f64>();
        let z_mu: Vec<f64> = (0..d).map(|k| z_mp[k] + w_star[k] + r * dir[k] / norm).collect();
        raw.push((enc.right_inverse(&z_mp).unwrap(), enc.right_inverse(&z_mu).unwrap()));
    }
    let lo = raw.iter().flat_map(|(a, b)| a.iter().chain(b)).fold(f64::INFINITY, |m, &x| m.min(x));
    let lift = 0.1 - lo.min(0.0);
    raw.into_iter()
        .map(|(a, b)| {
            let a = a.into_iter().map(|x| x + lift).collect();
            let b = b.into_iter().map(|x| x + lift).collect();
            (
                radiomap_core::RadioMap::from_values(width, height, a).unwrap(),
                radiomap_core::RadioMap::from_values(width, height, b).unwrap(),
            )
        })
        .collect()
}
