use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use radiomap_core::diffuse::schedule::make_schedule;
use radiomap_core::diffuse::{
    decode_checkpoint, encode_checkpoint, finetune, pretrain, Architecture, HeadMode, NormStats, Regularizer,
    TrainConfig, TrainItem, TrainState, TuneMode,
};
use radiomap_core::envgrid::SceneParams;
use radiomap_core::featspace::{distance_stability_check, feature_increment_check, FeatureEncoder, LinearEncoder};
use radiomap_core::formats::{decode_geometry, decode_map, encode_geometry, encode_map, read_file, write_file, PairedSample};
use radiomap_core::numeric::{norm2, sub};
use radiomap_core::pipeline::{
    estimate_geometry, evaluate_with_samples, finetune_items, generate_mp_set, generate_pair_set, normalized_pairs,
    one_shot_subset,
};
use radiomap_core::propagate::{residual, solve, verify_lowfreq_bound, verify_young_l2, LowPassKernel};
use radiomap_core::RadioMap;

use crate::config::RunConfig;
use crate::dataset::{Dataset, GenCounts};
use crate::error::{CliError, CliResult};
use crate::render;

fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{what} {} does not exist", path.display())))
    }
}

/// `<file>.config` for file outputs.
fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".config");
    path.with_file_name(name)
}

fn load_checkpoint(path: &Path) -> CliResult<TrainState> {
    require_file(path, "checkpoint")?;
    Ok(decode_checkpoint(&read_file(path)?)?)
}

fn save_checkpoint(path: &Path, state: &TrainState) -> CliResult<()> {
    write_file(path, &encode_checkpoint(state)?)?;
    Ok(())
}

pub fn scene_params(cfg: &RunConfig) -> CliResult<SceneParams> {
    Ok(SceneParams {
        width: cfg.get("width")?,
        height: cfg.get("height")?,
        cell_size: cfg.get("cell_size")?,
        building_count: (cfg.get("buildings_min")?, cfg.get("buildings_max")?),
        building_size: (cfg.get("building_size_min")?, cfg.get("building_size_max")?),
        margin: cfg.get("margin")?,
        blocker_count: (cfg.get("blockers_min")?, cfg.get("blockers_max")?),
        max_retries: SceneParams::desk().max_retries,
    })
}

pub fn gen(cfg: &RunConfig) -> CliResult<String> {
    let out = cfg.path("out")?;
    let seed: u64 = cfg.get("seed")?;
    let params = scene_params(cfg)?;
    let reflections: usize = cfg.get("reflections")?;
    let counts = GenCounts { mu_scenes: cfg.get("mu_count")?, tx_per_scene: cfg.get("tx_per_scene")? };
    let mp = generate_mp_set(seed, cfg.get("mp_count")?, &params, reflections)?;
    let pairs = if counts.mu_scenes == 0 {
        Vec::new()
    } else {
        generate_pair_set(seed, counts.mu_scenes, counts.tx_per_scene, &params, reflections)?
    };
    let data = Dataset { reflections, mp, pairs };
    data.write(&out, seed, &counts, &params)?;
    cfg.save(&out.join("gen.config"))?;
    Ok(format!("wrote {} main-path maps and {} pairs to {}", data.mp.len(), data.pairs.len(), out.display()))
}

/// Normalization used when no checkpoint is involved: the main-path split if
/// present (as pretraining does), otherwise the paired maps.
fn dataset_norm(data: &Dataset) -> CliResult<NormStats> {
    let norm = if data.mp.is_empty() {
        NormStats::from_maps(data.pairs.iter().flat_map(|p| [&p.mp, &p.mu]))
    } else {
        NormStats::from_maps(data.mp.iter().map(|(_, m)| m))
    };
    Ok(norm?)
}

struct Check {
    name: &'static str,
    checked: usize,
    violations: usize,
    /// Smallest `1 - lhs / rhs` over the checked cases.
    margin: f64,
}

impl Check {
    fn new(name: &'static str) -> Self {
        Check { name, checked: 0, violations: 0, margin: f64::INFINITY }
    }

    fn record(&mut self, lhs: f64, rhs: f64, pass: bool) {
        self.checked += 1;
        self.violations += usize::from(!pass);
        if rhs > 0.0 {
            self.margin = self.margin.min(1.0 - lhs / rhs);
        }
    }

    fn line(&self) -> String {
        let status = if self.violations == 0 { "PASS" } else { "FAIL" };
        format!(
            "{status} {}: {} checked, {} violations, min margin {:.3e}\n",
            self.name, self.checked, self.violations, self.margin
        )
    }
}

/// Decomposition, smoothing bounds, Lipschitz and feature-increment checks on every pair.
fn bound_checks(pairs: &[PairedSample], norm: &NormStats, enc: &LinearEncoder, sigma: f64) -> CliResult<Vec<Check>> {
    let kernel = LowPassKernel::gaussian(sigma)?;
    let normed = normalized_pairs(norm, pairs);
    let mut decomposition = Check::new("decomposition");
    let mut young = Check::new("young-l2");
    let mut sup = Check::new("sup-norm-support");
    let mut lipschitz = Check::new("lipschitz");
    let mut increment = Check::new("feature-increment");
    for (i, p) in pairs.iter().enumerate() {
        let r = residual(&p.mu, &p.mp)?;
        let scale = p.mu.max();
        let err = p
            .mu
            .values()
            .iter()
            .zip(p.mp.values())
            .zip(r.map.values())
            .fold(0.0f64, |m, ((mu, mp), d)| m.max((mu - (mp + d)).abs()));
        decomposition.record(err, 1e-12 * scale, err <= 1e-12 * scale);
        let y = verify_young_l2(&r.map, &kernel);
        young.record(y.smoothed_norm, y.residual_norm, y.pass);
        let s = verify_lowfreq_bound(&r, &kernel, p.scene.grid.cell_size());
        sup.record(s.lhs, s.rhs, s.pass);
        let (u, v) = (&normed[i].0, &normed[(i + 1) % normed.len()].1);
        let lhs = norm2(&sub(&enc.encode_map(u)?, &enc.encode_map(v)?));
        let rhs = enc.lipschitz_bound() * norm2(&sub(u.values(), v.values()));
        lipschitz.record(lhs, rhs, lhs <= rhs);
        let inc = feature_increment_check(enc, &normed[i].0, &normed[i].1)?;
        increment.record(inc.lhs, inc.rhs, inc.pass);
    }
    Ok(vec![decomposition, young, sup, lipschitz, increment])
}

fn finish_report(path: &Path, report: &str, checks: &[Check]) -> CliResult<String> {
    write_file(path, report.as_bytes())?;
    let failed: Vec<&str> = checks.iter().filter(|c| c.violations > 0).map(|c| c.name).collect();
    if failed.is_empty() {
        Ok(report.to_string())
    } else {
        Err(CliError::Verification(format!("{} (report at {})", failed.join(", "), path.display())))
    }
}

fn analysis_pairs(cfg: &RunConfig, data: &Dataset) -> CliResult<Vec<PairedSample>> {
    if data.pairs.is_empty() {
        return Err(CliError::Config("dataset has no paired samples".into()));
    }
    Ok(if cfg.flag_set("one_shot")? { one_shot_subset(&data.pairs) } else { data.pairs.clone() })
}

pub fn analyze(cfg: &RunConfig) -> CliResult<String> {
    let data = Dataset::load(&cfg.path("data")?)?;
    let out = cfg.path("out")?;
    let pairs = analysis_pairs(cfg, &data)?;
    // Shifts are measured in the units the fine-tuned model will see.
    let norm = match cfg.optional_path("checkpoint") {
        Some(path) => load_checkpoint(&path)?.norm,
        None => dataset_norm(&data)?,
    };
    let (w, h) = (pairs[0].mp.width(), pairs[0].mp.height());
    let enc = LinearEncoder::desk(w, h, cfg.get("encoder_seed")?)?;
    let checks = bound_checks(&pairs, &norm, &enc, cfg.get("sigma")?)?;
    let est = estimate_geometry(&enc, &norm, &pairs)?;
    let g = &est.geometry;
    write_file(&out.join("geometry.rfw"), &encode_geometry(g)?)?;

    let mut report = String::new();
    writeln!(report, "pairs = {}", pairs.len()).unwrap();
    writeln!(report, "norm_lo = {}\nnorm_hi = {}", norm.lo, norm.hi).unwrap();
    writeln!(report, "shift_norm = {:e}", norm2(&g.w)).unwrap();
    writeln!(report, "eta_bound = {:e}", g.eta_bound).unwrap();
    writeln!(report, "clamped = {}", est.clamped).unwrap();
    let mut all = checks;
    if pairs.len() >= 2 {
        let st = distance_stability_check(&enc, &normalized_pairs(&norm, &pairs), g)?;
        let mut c = Check::new("distance-stability");
        c.checked = st.pairs_checked;
        c.violations = st.violations;
        c.margin = if st.bound > 0.0 { 1.0 - st.max_gap / st.bound } else { f64::INFINITY };
        all.push(c);
    }
    for c in &all {
        report.push_str(&c.line());
    }
    cfg.save(&out.join("analyze.config"))?;
    finish_report(&out.join("analysis.txt"), &report, &all)
}

pub fn verify(cfg: &RunConfig) -> CliResult<String> {
    let data = Dataset::load(&cfg.path("data")?)?;
    let out = cfg.path("out")?;
    let norm = dataset_norm(&data)?;
    let mut checks = Vec::new();

    // Stored maps must match a fresh solve to storage precision, and the
    // residual must vanish wherever at most one path exists.
    let mut reproduce = Check::new("reproducible-maps");
    let mut single_path = Check::new("single-path-residual");
    let stored = |m: &RadioMap| m.values().iter().map(|&v| v as f32 as f64).collect::<Vec<_>>();
    for p in &data.pairs {
        let maps = solve(&p.scene, data.reflections)?;
        let same = stored(&maps.mp) == p.mp.values() && stored(&maps.mu) == p.mu.values();
        reproduce.record(0.0, 1.0, same);
        let worst = maps
            .path_counts
            .iter()
            .zip(maps.mu.values().iter().zip(maps.mp.values()))
            .filter(|(&n, _)| n <= 1)
            .fold(0.0f64, |m, (_, (mu, mp))| m.max((mu - mp).abs()));
        single_path.record(worst, 0.0, worst == 0.0);
    }
    for (scene, map) in &data.mp {
        let fresh = solve(scene, data.reflections)?;
        reproduce.record(0.0, 1.0, stored(&fresh.mp) == map.values());
    }
    checks.push(reproduce);
    checks.push(single_path);
    if !data.pairs.is_empty() {
        let (w, h) = (data.pairs[0].mp.width(), data.pairs[0].mp.height());
        let enc = LinearEncoder::desk(w, h, cfg.get("encoder_seed")?)?;
        checks.extend(bound_checks(&data.pairs, &norm, &enc, cfg.get("sigma")?)?);
    }
    let report: String = checks.iter().map(Check::line).collect();
    cfg.save(&out.join("verify.config"))?;
    finish_report(&out.join("verify.txt"), &report, &checks)
}

fn schedule_from(cfg: &RunConfig) -> CliResult<radiomap_core::diffuse::NoiseSchedule> {
    Ok(make_schedule(cfg.get("schedule_steps")?, cfg.get("beta_min")?, cfg.get("beta_max")?)?)
}

fn train_config(cfg: &RunConfig) -> CliResult<TrainConfig> {
    Ok(TrainConfig {
        steps: cfg.get("steps")?,
        batch: cfg.get("batch")?,
        lr: cfg.get("lr")?,
        clip: cfg.get("clip")?,
        seed: cfg.get("seed")?,
    })
}

pub fn pretrain_cmd(cfg: &RunConfig) -> CliResult<String> {
    let data = Dataset::load(&cfg.path("data")?)?;
    let out = cfg.path("out")?;
    if data.mp.is_empty() {
        return Err(CliError::Config("pretraining needs main-path maps".into()));
    }
    let norm = dataset_norm(&data)?;
    let items: Vec<TrainItem> = data.mp.iter().map(|(s, m)| TrainItem::main_path(s, m, &norm)).collect();
    let (w, h) = (data.mp[0].1.width(), data.mp[0].1.height());
    let tc = train_config(cfg)?;
    let state = TrainState::new(Architecture::new(w, h, 1)?, norm, schedule_from(cfg)?, tc.seed);
    let trained = pretrain(state, &tc, &items)?;
    save_checkpoint(&out, &trained)?;
    cfg.save(&sidecar(&out))?;
    let last = trained.loss_history.last().copied().unwrap_or(f64::NAN);
    Ok(format!("pretrained {} steps on {} maps, final loss {last:.5}", trained.step, items.len()))
}

pub fn finetune_cmd(cfg: &RunConfig) -> CliResult<String> {
    let state = load_checkpoint(&cfg.path("checkpoint")?)?;
    let geometry_path = cfg.path("geometry")?;
    require_file(&geometry_path, "geometry file")?;
    let geometry = decode_geometry(&read_file(&geometry_path)?)?;
    let data = Dataset::load(&cfg.path("data")?)?;
    let out = cfg.path("out")?;
    let pairs = analysis_pairs(cfg, &data)?;
    let mode = match cfg.raw("mode") {
        "full" => TuneMode::Full,
        "lora" => TuneMode::Lora { rank: cfg.get("rank")? },
        other => return Err(CliError::Config(format!("mode must be full or lora, got {other:?}"))),
    };
    let enc = LinearEncoder::desk(state.params.arch.width, state.params.arch.height, cfg.get("encoder_seed")?)?;
    if geometry.dim() != enc.dim() {
        return Err(CliError::Config(format!(
            "geometry has dimension {}, the encoder produces {}",
            geometry.dim(),
            enc.dim()
        )));
    }
    let items = finetune_items(&pairs, &state.norm, HeadMode::Single, &geometry)?;
    let reg = Regularizer { encoder: &enc, geometry: &geometry, lambda_max: cfg.get("lambda_max")?, beta: cfg.get("beta")? };
    let tuned = finetune(state, &train_config(cfg)?, &items, &reg, mode)?;
    save_checkpoint(&out, &tuned)?;
    cfg.save(&sidecar(&out))?;
    let last = tuned.loss_history.last().copied().unwrap_or(f64::NAN);
    Ok(format!("fine-tuned on {} pairs ({mode:?}), final loss {last:.5}", items.len()))
}

pub fn eval(cfg: &RunConfig) -> CliResult<String> {
    let state = load_checkpoint(&cfg.path("checkpoint")?)?;
    let data = Dataset::load(&cfg.path("data")?)?;
    let out = cfg.path("out")?;
    let mut cases: Vec<_> = match cfg.raw("target") {
        "mu" => data.pairs.iter().map(|p| (&p.scene, &p.mu)).collect(),
        "mp" => data.mp.iter().map(|(s, m)| (s, m)).collect(),
        other => return Err(CliError::Config(format!("target must be mu or mp, got {other:?}"))),
    };
    let limit: usize = cfg.get("limit")?;
    if limit > 0 {
        cases.truncate(limit);
    }
    if cases.is_empty() {
        return Err(CliError::Config("no evaluation cases in the dataset".into()));
    }
    let (report, samples) = evaluate_with_samples(&state, &cases, cfg.get("seed")?)?;
    write_file(&out.join("report.txt"), report.to_text().as_bytes())?;
    write_file(&out.join("report.kv"), report.to_kv().as_bytes())?;
    if cfg.flag_set("save_maps")? {
        for (i, m) in samples.iter().enumerate() {
            write_file(&out.join("samples").join(format!("{i:05}.map")), &encode_map(m))?;
        }
    }
    cfg.save(&out.join("eval.config"))?;
    Ok(report.to_text())
}

pub fn render_cmd(cfg: &RunConfig) -> CliResult<String> {
    let input = cfg.path("input")?;
    require_file(&input, "map file")?;
    let out = cfg.path("out")?;
    let map = decode_map(&read_file(&input)?)?;
    let shown = match cfg.raw("scale") {
        "unit" => map,
        "db" => render::db_scale(&map),
        other => return Err(CliError::Config(format!("scale must be unit or db, got {other:?}"))),
    };
    write_file(&out, &render::to_pgm(&shown))?;
    cfg.save(&sidecar(&out))?;
    Ok(format!("wrote {}x{} image to {}", shown.width(), shown.height(), out.display()))
}
