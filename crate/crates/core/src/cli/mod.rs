//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 failed verification or I/O, 2 bad input,
//! 3 numerical abort during training.

pub mod config;
pub mod gradcheck;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use crate::checkpoint::AgentCheckpoint;
use crate::error::{Error, Result};
use crate::eval::{self, render_svg, DeterministicActor, NoisyReport};
use crate::sac::{log_csv, train};
use crate::tabular::{self, Mutation};

pub use config::{RunConfig, SweepSection};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_ABORT: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "usr-rl", version, about = "Robust actor-critic training and robustness evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an agent and write checkpoint.json and train_log.csv.
    Train(TrainArgs),
    /// Evaluate a checkpoint over a fixed-parameter sweep.
    Sweep(SweepArgs),
    /// Evaluate a checkpoint under random-walk parameter noise.
    NoisySweep(NoisyArgs),
    /// Check robust backups against brute force on random finite MDPs.
    TabularVerify(VerifyArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides train.seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Supplies sweep.* defaults; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub param: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    pub min: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub max: Option<f64>,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub quantile: Option<f64>,
    /// Evaluation seeds; repeat the flag for several.
    #[arg(long = "seed", default_values_t = [0u64])]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct NoisyArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub walk_sigma: Option<f64>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write failing instances here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Negates the L2 support function, to confirm the suites catch it.
    #[arg(long, hide = true)]
    pub mutate_flip_l2: bool,
}

/// Exit code for an error that escaped a command.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. }
        | Error::UnknownParam { .. }
        | Error::OutOfRange { .. }
        | Error::Contract(_)
        | Error::Shape { .. } => EXIT_USAGE,
        Error::Training { .. } => EXIT_ABORT,
        _ => EXIT_FAILED,
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Train(a) => cmd_train(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::NoisySweep(a) => cmd_noisy_sweep(&a),
        Command::TabularVerify(a) => cmd_tabular_verify(&a),
        Command::Gradcheck => cmd_gradcheck(),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::parse(&fs::read_to_string(p)?),
        None => Ok(RunConfig::default()),
    }
}

pub fn cmd_train(a: &TrainArgs) -> Result<i32> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.train.seed = seed;
    }
    fs::create_dir_all(&a.out)?;
    let outcome = train(&cfg.train)?;
    outcome.checkpoint.save(&a.out.join("checkpoint.json"))?;
    fs::write(a.out.join("train_log.csv"), log_csv(&outcome.log))?;
    if let Some(err) = outcome.abort {
        eprintln!("error: {err}; last finite checkpoint retained");
        return Ok(EXIT_ABORT);
    }
    info!(
        "trained {} steps, checkpoint {}",
        outcome.checkpoint.steps,
        outcome.checkpoint.id()?
    );
    Ok(EXIT_OK)
}

pub fn cmd_sweep(a: &SweepArgs) -> Result<i32> {
    let cfg = load_config(a.config.as_deref())?;
    let overrides = SweepSection {
        param: a.param.clone(),
        min: a.min,
        max: a.max,
        points: a.points,
        episodes: a.episodes,
        quantile: a.quantile,
        walk_sigma: None,
    };
    let mut sweep_cfg = cfg.sweep_config(&overrides)?;
    sweep_cfg.seeds = a.seeds.clone();
    sweep_cfg.validate()?;
    let ckpt = AgentCheckpoint::load(&a.checkpoint)?;
    let actor = ckpt.actor()?;
    let env = ckpt.config.make_env()?;
    env.spec().param(&sweep_cfg.param)?;
    let report = eval::sweep(&env, &DeterministicActor(&actor), &sweep_cfg, &ckpt.id()?)?;
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("curve.csv"), report.curve_csv())?;
    fs::write(a.out.join("report.json"), report.to_json()?)?;
    fs::write(a.out.join("curve.svg"), render_svg(&report))?;
    println!(
        "{} {} over [{}, {}]: robust_auc {:.6} band_area {:.6}",
        report.env.name, report.param, report.range[0], report.range[1], report.auc, report.band_area
    );
    Ok(EXIT_OK)
}

pub fn cmd_noisy_sweep(a: &NoisyArgs) -> Result<i32> {
    let cfg = load_config(a.config.as_deref())?;
    let walk_sigma = a.walk_sigma.or(cfg.sweep.walk_sigma).unwrap_or(0.0);
    let episodes = a.episodes.or(cfg.sweep.episodes).unwrap_or(100);
    let ckpt = AgentCheckpoint::load(&a.checkpoint)?;
    let actor = ckpt.actor()?;
    let env = ckpt.config.make_env()?;
    let (value, returns) = eval::noisy_sweep(&env, &DeterministicActor(&actor), walk_sigma, episodes, a.seed)?;
    let report = NoisyReport {
        env: env.kind().to_string(),
        walk_sigma,
        episodes,
        quantile: 0.10,
        value,
        checkpoint_id: ckpt.id()?,
        seed: a.seed,
        returns,
    };
    fs::create_dir_all(&a.out)?;
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    fs::write(a.out.join("noisy.json"), json)?;
    println!("walk_sigma {walk_sigma}: q10 return {value:.6}");
    Ok(EXIT_OK)
}

pub fn cmd_tabular_verify(a: &VerifyArgs) -> Result<i32> {
    let mutation = if a.mutate_flip_l2 {
        warn!("running with the L2 sign mutation enabled");
        Mutation::FlipL2Sign
    } else {
        Mutation::None
    };
    let report = tabular::verify(a.trials, a.tol, a.seed, mutation)?;
    print!("{}", report.table());
    if report.passed() {
        return Ok(EXIT_OK);
    }
    let mut json = serde_json::to_string_pretty(&report.violations)?;
    json.push('\n');
    match &a.out {
        Some(path) => {
            fs::write(path, json)?;
            eprintln!("{} violations written to {}", report.violations.len(), path.display());
        }
        None => print!("{json}"),
    }
    Ok(EXIT_FAILED)
}

pub fn cmd_gradcheck() -> Result<i32> {
    let results = gradcheck::run_all()?;
    println!("{:<24} {:>7} {:>12} {:>10}  status", "group", "checks", "worst", "threshold");
    for r in &results {
        println!(
            "{:<24} {:>7} {:>12.3e} {:>10.0e}  {}",
            r.group,
            r.checks,
            r.worst,
            r.threshold,
            if r.passed() { "ok" } else { "FAIL" }
        );
    }
    Ok(if results.iter().all(|r| r.passed()) {
        EXIT_OK
    } else {
        EXIT_FAILED
    })
}
