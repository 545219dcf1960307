//! Experiment harness behind the `adlearn` binary. Every subcommand reads one
//! config file, writes CSV tables with JSON sidecars into the output directory,
//! and maps failures to exit codes: 2 for configuration errors, 3 when an exact
//! solve stops at its time limit, 1 otherwise.

mod artifact;
mod commands;
mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

pub use artifact::{config_hash, git_revision, sidecar_path};
pub use commands::{
    cmd_evaluate, cmd_exact, cmd_generate, cmd_grid_eval, cmd_sweep_deficit, cmd_train, coef_index, read_theta,
    steady_state, theta_path, ThetaFile,
};
pub use config::{
    DataSection, ExactSection, ExperimentConfig, GridAxis, GridSection, Overrides, SweepSection, TrainSection,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Data(#[from] crate::datagen::DataError),
    #[error(transparent)]
    Forecast(#[from] crate::forecast::ForecastError),
    #[error(transparent)]
    Dispatch(#[from] crate::dispatch::DispatchError),
    #[error(transparent)]
    Train(#[from] crate::trainer::TrainError),
    #[error(transparent)]
    Exact(#[from] crate::exact::ExactError),
    #[error(transparent)]
    Lp(#[from] crate::lp::LpError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

/// Files written by a subcommand and the number of exact solves that hit their limit.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub timeouts: usize,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.timeouts > 0 {
            3
        } else {
            0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Write training and evaluation datasets.
    Generate,
    /// Train every (variant, T, seed) and write θ files.
    Train,
    /// Out-of-sample costs and forecast errors of trained θ.
    Evaluate,
    /// Retrain over a grid of load-shedding prices.
    SweepDeficit,
    /// Cost surface over two coefficients.
    GridEval,
    /// Exact estimation against the heuristic.
    Exact,
}

#[derive(Debug, Parser)]
#[command(name = "adlearn", version, about = "Application-driven learning of forecasts for energy and reserve dispatch")]
pub struct Args {
    #[command(subcommand)]
    pub command: Command,
    /// TOML or JSON experiment config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Comma-separated seeds.
    #[arg(long, global = true, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long, global = true)]
    pub variant: Option<String>,
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Big-M MILP of each exact instance in MPS format.
    #[arg(long, global = true)]
    pub export_mps: Option<PathBuf>,
}

impl Args {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            out: self.out.clone(),
            seeds: self.seeds.clone(),
            variant: self.variant.clone(),
            jobs: self.jobs,
            export_mps: self.export_mps.clone(),
        }
    }
}

pub fn run(command: Command, cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    match command {
        Command::Generate => cmd_generate(cfg),
        Command::Train => cmd_train(cfg),
        Command::Evaluate => cmd_evaluate(cfg),
        Command::SweepDeficit => cmd_sweep_deficit(cfg),
        Command::GridEval => cmd_grid_eval(cfg),
        Command::Exact => cmd_exact(cfg),
    }
}

/// Parse `argv`, run, report on stderr; returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let Some(path) = &args.config else {
        eprintln!("adlearn: --config FILE is required");
        return 2;
    };
    let result = ExperimentConfig::load(path, &args.overrides()).and_then(|cfg| run(args.command, &cfg));
    match result {
        Ok(outcome) => {
            for f in &outcome.files {
                println!("{}", f.display());
            }
            if outcome.timeouts > 0 {
                eprintln!("adlearn: {} exact solve(s) stopped at the time limit", outcome.timeouts);
            }
            outcome.exit_code()
        }
        Err(e) => {
            eprintln!("adlearn: {e}");
            e.exit_code()
        }
    }
}
