//! `twcv` command-line front end.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use twcv::simfield::Design;

use config::{Overrides, RunConfig};

#[derive(Debug, Parser)]
#[command(
    name = "twcv",
    version,
    about = "Target-weighted cross-validation for spatial prediction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Worker threads (default: config, then $TWCV_WORKERS, then one per core).
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    replicates: Option<usize>,
    /// random, clustered or biased.
    #[arg(long, value_parser = parse_design)]
    design: Option<Design>,
}

fn parse_design(s: &str) -> Result<Design, String> {
    s.parse().map_err(|e: twcv::Error| e.to_string())
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write simulated worlds and samples.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Write the validation tasks of every configured task generator.
    Tasks {
        #[command(flatten)]
        common: Common,
    },
    /// Write estimator weights and their diagnostics.
    Weights {
        #[command(flatten)]
        common: Common,
    },
    /// Estimate deployment risk for a user dataset and prediction grid.
    Evaluate {
        /// Observations with coordinates, response and covariates.
        #[arg(long)]
        dataset: PathBuf,
        /// Deployment locations with coordinates and covariates.
        #[arg(long)]
        grid: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run the Monte Carlo experiment.
    Experiment {
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common) -> anyhow::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply(&Overrides {
        seed: common.seed,
        out_dir: common.out_dir.clone(),
        workers: common.workers,
        replicates: common.replicates,
        design: common.design,
    });
    cfg.experiment.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Simulate { common } => commands::simulate(&load(&common)?),
        Command::Tasks { common } => commands::tasks(&load(&common)?),
        Command::Weights { common } => commands::weights(&load(&common)?),
        Command::Evaluate { dataset, grid, common } => commands::evaluate(&load(&common)?, &dataset, &grid),
        Command::Experiment { common } => commands::experiment(&load(&common)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
