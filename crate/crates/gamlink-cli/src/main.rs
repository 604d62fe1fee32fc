//! Command-line front end: fit additive models from CSV, run seeded Monte
//! Carlo experiments, select bandwidths, and emit grids, tables and
//! confidence bands as CSV/JSON.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical error.
//! Every failure writes a structured `error.json` record into the output
//! directory (when one was given) in addition to the stderr message.

mod cmd_bandwidth;
mod cmd_diagnose;
mod cmd_fit;
mod cmd_simulate;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Data(_) => "data",
            CliError::Numerical(_) => "numerical",
        }
    }
}

macro_rules! numerical_from {
    ($($ty:ty),* $(,)?) => {$(
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Numerical(e.to_string())
            }
        }
    )*};
}

numerical_from!(
    gamlink::FirstStageError,
    gamlink::SecondStageError,
    gamlink::AsymptoticsError,
    gamlink::BandwidthError,
    gamlink::MonteCarloError,
);

impl From<gamlink::DataError> for CliError {
    fn from(e: gamlink::DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<gamlink::BasisError> for CliError {
    fn from(e: gamlink::BasisError) -> Self {
        match e {
            gamlink::BasisError::InvalidKappa | gamlink::BasisError::InvalidQuadratureOrder => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Numerical(other.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "gamlink",
    about = "Two-stage estimation of additive models with a known link function",
    version
)]
struct Cli {
    /// Cap the rayon worker count. Results are independent of this.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a model from a CSV file and write component grids with bands.
    Fit(cmd_fit::FitArgs),
    /// Run a replicated Monte Carlo experiment on a synthetic design.
    Simulate(cmd_simulate::SimulateArgs),
    /// Select per-component bandwidth constants (plug-in or PLS).
    Bandwidth(cmd_bandwidth::BandwidthArgs),
    /// First-stage diagnostics for a CSV dataset.
    Diagnose(cmd_diagnose::DiagnoseArgs),
}

impl Command {
    fn out_dir(&self) -> &PathBuf {
        match self {
            Command::Fit(a) => &a.out,
            Command::Simulate(a) => &a.out,
            Command::Bandwidth(a) => &a.out,
            Command::Diagnose(a) => &a.out,
        }
    }

    fn run(&self) -> Result<(), CliError> {
        match self {
            Command::Fit(a) => cmd_fit::run(a),
            Command::Simulate(a) => cmd_simulate::run(a),
            Command::Bandwidth(a) => cmd_bandwidth::run(a),
            Command::Diagnose(a) => cmd_diagnose::run(a),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    let result = (|| -> Result<(), CliError> {
        let out = cli.command.out_dir();
        std::fs::create_dir_all(out)
            .map_err(|e| CliError::Data(format!("cannot create {}: {e}", out.display())))?;
        match cli.threads {
            Some(t) if t > 0 => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(t)
                    .build()
                    .map_err(|e| CliError::Usage(format!("bad --threads: {e}")))?;
                pool.install(|| cli.command.run())
            }
            Some(_) => Err(CliError::Usage("--threads must be positive".into())),
            None => cli.command.run(),
        }
    })();

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let record = serde_json::json!({
                "exit_code": e.exit_code(),
                "kind": e.kind(),
                "message": e.to_string(),
            });
            let path = cli.command.out_dir().join("error.json");
            // A failure to record the error must not mask the error itself.
            let _ = std::fs::write(&path, format!("{record:#}\n"));
            ExitCode::from(e.exit_code())
        }
    }
}
