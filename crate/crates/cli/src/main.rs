//! `routechoice`: estimate, simulate and validate recursive logit route choice models.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use commands::{ConfigError, RunContext, StrictInfeasible};
use config::{Overrides, RunConfig};
use output::RunDir;

#[derive(Parser)]
#[command(name = "routechoice", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the configured model and write estimates and the iteration trace.
    Estimate(Common),
    /// Draw paths from the universal model at the simulation truth.
    Simulate(Common),
    /// K-fold holdout validation, plus the out-of-prism grid when configured.
    Validate(Common),
    /// Spectral and row-sum diagnostics of the universal value function at one β.
    Feasibility(Common),
    /// Prism sizes per destination (or OD pair) and detour statistics.
    Prism(Common),
    /// Log-likelihood and gradient at the start point.
    Loglik(Common),
    /// Repeated-sample reproducibility runs and the T sweep.
    Experiment(Common),
    /// Universal-model feasibility over a two-parameter grid.
    Scan(Common),
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long, short)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated start point.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    start: Option<Vec<f64>>,
    /// Comma-separated stage counts (scalar prism T, or the T sweep).
    #[arg(long = "t", value_delimiter = ',')]
    stages: Option<Vec<usize>>,
    /// Stop at the first trial point where the value function does not exist.
    #[arg(long)]
    strict_infeasible: bool,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            output: self.out.clone(),
            start: self.start.clone(),
            stages: self.stages.clone(),
            strict_infeasible: self.strict_infeasible,
        }
    }
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Self::Estimate(_) => "estimate",
            Self::Simulate(_) => "simulate",
            Self::Validate(_) => "validate",
            Self::Feasibility(_) => "feasibility",
            Self::Prism(_) => "prism",
            Self::Loglik(_) => "loglik",
            Self::Experiment(_) => "experiment",
            Self::Scan(_) => "scan",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Self::Estimate(c)
            | Self::Simulate(c)
            | Self::Validate(c)
            | Self::Feasibility(c)
            | Self::Prism(c)
            | Self::Loglik(c)
            | Self::Experiment(c)
            | Self::Scan(c) => c,
        }
    }
}

fn threads() -> Result<usize> {
    if let Ok(v) = std::env::var("ROUTECHOICE_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| ConfigError(format!("ROUTECHOICE_THREADS must be a positive integer, got `{v}`")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("cannot configure the thread pool")?;
    }
    Ok(rayon::current_num_threads())
}

fn run(cli: Cli) -> Result<()> {
    let threads = threads()?;
    let common = cli.command.common();
    let cfg = RunConfig::load(&common.config, &common.overrides()).map_err(|e| ConfigError(format!("{e:#}")))?;
    let spec = cfg.utility_spec().map_err(|e| ConfigError(format!("{e:#}")))?;
    let network = cfg.load_network()?;
    spec.validate(&network)?;
    let run = RunDir::create(&cfg.output)?;
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let clock = Instant::now();
    let mut ctx = RunContext {
        cfg,
        spec,
        network,
        run,
    };
    let outcome = match &cli.command {
        Command::Estimate(_) => commands::estimate(&mut ctx),
        Command::Simulate(_) => commands::simulate(&mut ctx),
        Command::Validate(_) => commands::validate(&mut ctx),
        Command::Feasibility(_) => commands::feasibility(&mut ctx),
        Command::Prism(_) => commands::prism(&mut ctx),
        Command::Loglik(_) => commands::loglik(&mut ctx),
        Command::Experiment(_) => commands::experiment(&mut ctx),
        Command::Scan(_) => commands::scan(&mut ctx),
    };
    let meta = json!({
        "command": cli.command.name(),
        "version": env!("CARGO_PKG_VERSION"),
        "config_hash": ctx.cfg.hash(),
        "seed": ctx.cfg.seed,
        "threads": threads,
        "started_unix": started,
        "seconds": clock.elapsed().as_secs_f64(),
        "ok": outcome.is_ok(),
        "artifacts": ctx.run.artifacts(),
        "config": ctx.cfg,
    });
    ctx.run.write_json("run_meta.json", &meta)?;
    outcome
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return 2;
    }
    if err.downcast_ref::<StrictInfeasible>().is_some() {
        return 4;
    }
    match err.downcast_ref::<routechoice_core::Error>() {
        Some(routechoice_core::Error::Spec(_) | routechoice_core::Error::Dimension { .. } | routechoice_core::Error::UnknownAttribute(_)) => 2,
        Some(_) => 3,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
