//! `vps`: frame plans, benchmark runs, scaling-law simulation and fits.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

mod config;
mod plan;
mod report;
mod run;
mod scaling;
mod serve;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;
use tracing_subscriber::EnvFilter;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub fn runtime(msg: impl Into<String>) -> CliError {
    CliError::Runtime(msg.into())
}

/// Atomic write; failures are runtime errors naming the path.
pub fn write_output(path: &Path, contents: &str) -> CliResult {
    vps_core::io::write_atomic(path, contents.as_bytes())
        .map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))
}

#[derive(Debug, Parser)]
#[command(name = "vps", version, about = "Parallel-stream video decoding toolkit")]
struct Cli {
    /// Log filter when RUST_LOG is unset (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print a frame-selection plan and audit it.
    Plan(plan::PlanArgs),
    /// Evaluate methods over a dataset and write report files.
    Run(run::RunArgs),
    /// Monte Carlo check of the multi-stream loss law.
    Simulate(scaling::SimulateArgs),
    /// Fit the loss law to measured (N, J, loss) points.
    Fit(scaling::FitArgs),
    /// Rebuild report tables from a results file.
    Report(report::ReportArgs),
    /// Serve the synthetic toy world over the scoring protocol.
    Serve(serve::ServeArgs),
}

fn init_logging(default: &str) {
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(&cli.log);
    let outcome = match cli.command {
        Command::Plan(a) => plan::cmd_plan(a),
        Command::Run(a) => run::cmd_run(a),
        Command::Simulate(a) => scaling::cmd_simulate(a),
        Command::Fit(a) => scaling::cmd_fit(a),
        Command::Report(a) => report::cmd_report(a),
        Command::Serve(a) => serve::cmd_serve(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

/// Reads a file to a string, as a usage error when it is missing.
pub fn read_input(path: &PathBuf) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))
}
