//! `odocal`: simulate, extract, calibrate and report.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 data error,
//! 3 calibration-stage failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::anyhow;
use clap::{Parser, Subcommand};

use crate::config::ExperimentConfig;

#[derive(Debug, Parser)]
#[command(
    name = "odocal",
    version,
    about = "Landmark-based odometry calibration"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a dataset (and optionally LiDAR frames) from a config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the simulation seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Extract landmark observations from a directory of point-cloud frames.
    Extract {
        frames_dir: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Dataset whose landmarks are replaced by the extracted ones.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the multi-restart two-stage calibration on a dataset.
    Calibrate {
        dataset: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Overrides the restart seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Turn a calibration result into plot-ready CSV tables.
    Report {
        result: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
    Stage(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Stage(_) => 3,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Usage(e) | Failure::Data(e) | Failure::Stage(e) => e,
        }
    }
}

fn load(path: &std::path::Path) -> Result<ExperimentConfig, Failure> {
    ExperimentConfig::load(path).map_err(|e| Failure::Usage(e.into()))
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var("ODOCAL_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| {
            Failure::Usage(anyhow!(
                "ODOCAL_THREADS must be a positive integer, got {value:?}"
            ))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Usage(e.into()))
}

fn run(cli: Cli) -> Result<(), Failure> {
    configure_threads()?;
    match cli.command {
        Command::Simulate { config, seed, out } => {
            commands::simulate_cmd(&load(&config)?, seed, out)
        }
        Command::Extract {
            frames_dir,
            config,
            dataset,
            out,
        } => commands::extract_cmd(&load(&config)?, &frames_dir, dataset.as_deref(), out),
        Command::Calibrate {
            dataset,
            config,
            seed,
            out,
        } => commands::calibrate_cmd(&load(&config)?, &dataset, seed, out),
        Command::Report { result, out } => commands::report_cmd(&result, out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}
