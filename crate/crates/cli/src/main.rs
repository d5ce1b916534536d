//! `radiomap`: dataset generation, shift analysis, training, evaluation and export.
//!
//! Every command accepts `--config FILE` with `key = value` lines; flags
//! override the file, and the resolved settings are written next to the outputs.

mod commands;
mod config;
mod dataset;
mod error;
mod render;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use error::CliResult;

#[derive(Parser)]
#[command(name = "radiomap", version, about = "Paired radio map simulation and few-shot diffusion fine-tuning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a main-path dataset and a paired multipath subset.
    Gen(GenArgs),
    /// Run the bound verifiers and estimate the feature shift geometry.
    Analyze(AnalyzeArgs),
    /// Train a denoiser on main-path maps.
    Pretrain(TrainArgs),
    /// Fine-tune a checkpoint on paired multipath maps.
    Finetune(FinetuneArgs),
    /// Sample maps for every case of a dataset and report metrics.
    Eval(EvalArgs),
    /// Export a map file as an 8-bit PGM image.
    Render(RenderArgs),
    /// Re-solve stored scenes and check decomposition and smoothing bounds.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Main-path scenes.
    #[arg(long)]
    mp_count: Option<usize>,
    /// Multipath layouts; each contributes `tx-per-scene` pairs.
    #[arg(long, visible_alias = "scenes")]
    mu_count: Option<usize>,
    #[arg(long)]
    tx_per_scene: Option<usize>,
    /// Maximum reflection order.
    #[arg(long, short = 'k')]
    reflections: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    cell_size: Option<f64>,
    #[arg(long)]
    buildings_min: Option<usize>,
    #[arg(long)]
    buildings_max: Option<usize>,
    #[arg(long)]
    building_size_min: Option<usize>,
    #[arg(long)]
    building_size_max: Option<usize>,
    #[arg(long)]
    margin: Option<usize>,
    #[arg(long)]
    blockers_min: Option<usize>,
    #[arg(long)]
    blockers_max: Option<usize>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Take normalization statistics from this checkpoint instead of the dataset.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    encoder_seed: Option<u64>,
    /// Low-pass kernel width in cells.
    #[arg(long)]
    sigma: Option<f64>,
    /// Use only the first transmitter placement of every layout.
    #[arg(long)]
    one_shot: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    clip: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    schedule_steps: Option<usize>,
    #[arg(long)]
    beta_min: Option<f64>,
    #[arg(long)]
    beta_max: Option<f64>,
}

#[derive(Args)]
struct FinetuneArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    geometry: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// `full` or `lora`.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    rank: Option<usize>,
    /// Weight of the direction loss; 0 disables it.
    #[arg(long)]
    lambda_max: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    clip: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    encoder_seed: Option<u64>,
    /// Fine-tune on one pair per layout.
    #[arg(long)]
    one_shot: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Report directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// `mu` (paired multipath maps) or `mp` (main-path split).
    #[arg(long)]
    target: Option<String>,
    /// Evaluate only the first N cases (0 = all).
    #[arg(long)]
    limit: Option<usize>,
    /// Also write the sampled maps (normalized, clamped to [0, 1]).
    #[arg(long)]
    save_maps: bool,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Map file to render.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// `unit` for maps already in [0, 1], `db` for linear power.
    #[arg(long)]
    scale: Option<String>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    encoder_seed: Option<u64>,
    #[arg(long)]
    sigma: Option<f64>,
}

fn display(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

fn resolve(
    command: &'static str,
    defaults: &[(&'static str, &str)],
    file: &Option<PathBuf>,
    apply: impl FnOnce(&mut RunConfig) -> CliResult<()>,
) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::new(command, defaults);
    if let Some(path) = file {
        cfg.load_file(path)?;
    }
    apply(&mut cfg)?;
    Ok(cfg)
}

const GEN_DEFAULTS: &[(&str, &str)] = &[
    ("out", ""),
    ("seed", "0"),
    ("mp_count", "64"),
    ("mu_count", "8"),
    ("tx_per_scene", "2"),
    ("reflections", "2"),
    ("width", "32"),
    ("height", "32"),
    ("cell_size", "1"),
    ("buildings_min", "2"),
    ("buildings_max", "5"),
    ("building_size_min", "3"),
    ("building_size_max", "8"),
    ("margin", "1"),
    ("blockers_min", "0"),
    ("blockers_max", "0"),
];

const TRAIN_DEFAULTS: &[(&str, &str)] = &[
    ("data", ""),
    ("out", ""),
    ("steps", "3000"),
    ("batch", "8"),
    ("lr", "0.001"),
    ("clip", "1"),
    ("seed", "0"),
    ("schedule_steps", "200"),
    ("beta_min", "0.0001"),
    ("beta_max", "0.02"),
];

const FINETUNE_DEFAULTS: &[(&str, &str)] = &[
    ("checkpoint", ""),
    ("geometry", ""),
    ("data", ""),
    ("out", ""),
    ("mode", "full"),
    ("rank", "4"),
    ("lambda_max", "0.4"),
    ("beta", "1"),
    ("steps", "500"),
    ("batch", "8"),
    ("lr", "0.0001"),
    ("clip", "1"),
    ("seed", "1"),
    ("encoder_seed", "0"),
    ("one_shot", "false"),
];

fn run(cli: Cli) -> CliResult<String> {
    match cli.command {
        Command::Gen(a) => {
            let cfg = resolve("gen", GEN_DEFAULTS, &a.config, |c| {
                c.flag("out", &display(&a.out))?;
                c.flag("seed", &a.seed)?;
                c.flag("mp_count", &a.mp_count)?;
                c.flag("mu_count", &a.mu_count)?;
                c.flag("tx_per_scene", &a.tx_per_scene)?;
                c.flag("reflections", &a.reflections)?;
                c.flag("width", &a.width)?;
                c.flag("height", &a.height)?;
                c.flag("cell_size", &a.cell_size)?;
                c.flag("buildings_min", &a.buildings_min)?;
                c.flag("buildings_max", &a.buildings_max)?;
                c.flag("building_size_min", &a.building_size_min)?;
                c.flag("building_size_max", &a.building_size_max)?;
                c.flag("margin", &a.margin)?;
                c.flag("blockers_min", &a.blockers_min)?;
                c.flag("blockers_max", &a.blockers_max)
            })?;
            commands::gen(&cfg)
        }
        Command::Analyze(a) => {
            let defaults = [
                ("data", ""),
                ("out", ""),
                ("checkpoint", ""),
                ("encoder_seed", "0"),
                ("sigma", "1.5"),
                ("one_shot", "false"),
            ];
            let cfg = resolve("analyze", &defaults, &a.config, |c| {
                c.flag("data", &display(&a.data))?;
                c.flag("out", &display(&a.out))?;
                c.flag("checkpoint", &display(&a.checkpoint))?;
                c.flag("encoder_seed", &a.encoder_seed)?;
                c.flag("sigma", &a.sigma)?;
                c.switch("one_shot", a.one_shot)
            })?;
            commands::analyze(&cfg)
        }
        Command::Pretrain(a) => {
            let cfg = resolve("pretrain", TRAIN_DEFAULTS, &a.config, |c| {
                c.flag("data", &display(&a.data))?;
                c.flag("out", &display(&a.out))?;
                c.flag("steps", &a.steps)?;
                c.flag("batch", &a.batch)?;
                c.flag("lr", &a.lr)?;
                c.flag("clip", &a.clip)?;
                c.flag("seed", &a.seed)?;
                c.flag("schedule_steps", &a.schedule_steps)?;
                c.flag("beta_min", &a.beta_min)?;
                c.flag("beta_max", &a.beta_max)
            })?;
            commands::pretrain_cmd(&cfg)
        }
        Command::Finetune(a) => {
            let cfg = resolve("finetune", FINETUNE_DEFAULTS, &a.config, |c| {
                c.flag("checkpoint", &display(&a.checkpoint))?;
                c.flag("geometry", &display(&a.geometry))?;
                c.flag("data", &display(&a.data))?;
                c.flag("out", &display(&a.out))?;
                c.flag("mode", &a.mode)?;
                c.flag("rank", &a.rank)?;
                c.flag("lambda_max", &a.lambda_max)?;
                c.flag("beta", &a.beta)?;
                c.flag("steps", &a.steps)?;
                c.flag("batch", &a.batch)?;
                c.flag("lr", &a.lr)?;
                c.flag("clip", &a.clip)?;
                c.flag("seed", &a.seed)?;
                c.flag("encoder_seed", &a.encoder_seed)?;
                c.switch("one_shot", a.one_shot)
            })?;
            commands::finetune_cmd(&cfg)
        }
        Command::Eval(a) => {
            let defaults = [
                ("checkpoint", ""),
                ("data", ""),
                ("out", ""),
                ("seed", "77"),
                ("target", "mu"),
                ("limit", "0"),
                ("save_maps", "false"),
            ];
            let cfg = resolve("eval", &defaults, &a.config, |c| {
                c.flag("checkpoint", &display(&a.checkpoint))?;
                c.flag("data", &display(&a.data))?;
                c.flag("out", &display(&a.out))?;
                c.flag("seed", &a.seed)?;
                c.flag("target", &a.target)?;
                c.flag("limit", &a.limit)?;
                c.switch("save_maps", a.save_maps)
            })?;
            commands::eval(&cfg)
        }
        Command::Render(a) => {
            let defaults = [("input", ""), ("out", ""), ("scale", "unit")];
            let cfg = resolve("render", &defaults, &a.config, |c| {
                c.flag("input", &display(&a.input))?;
                c.flag("out", &display(&a.out))?;
                c.flag("scale", &a.scale)
            })?;
            commands::render_cmd(&cfg)
        }
        Command::Verify(a) => {
            let defaults = [("data", ""), ("out", ""), ("encoder_seed", "0"), ("sigma", "1.5")];
            let cfg = resolve("verify", &defaults, &a.config, |c| {
                c.flag("data", &display(&a.data))?;
                c.flag("out", &display(&a.out))?;
                c.flag("encoder_seed", &a.encoder_seed)?;
                c.flag("sigma", &a.sigma)
            })?;
            commands::verify(&cfg)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(summary) => {
            print!("{summary}");
            if !summary.ends_with('\n') {
                println!();
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("radiomap: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
