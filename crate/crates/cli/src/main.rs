//! `optomirror`: batch front end for simulation, reconstruction and the
//! self-test.
//!
//! Exit codes: 0 ok, 1 self-test failure, 2 configuration error, 3 truncation
//! overflow, 4 metadata mismatch between input files and the configuration.

mod commands;
mod config;
mod output;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use optomirror::EngineKind;

#[derive(Debug, Parser)]
#[command(name = "optomirror", version, about = "Cavity-field / movable-mirror simulation and mirror-state reconstruction")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for output files; overrides `output.dir`.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Propagator used by `simulate`.
    #[arg(long, global = true, default_value = "factored")]
    engine: EngineKind,
    /// Shot-noise seed; overrides `noise.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the coupling derivation g, eta, epsilon.
    Params,
    /// Simulate quadrature records, one CSV per eta.
    Simulate,
    /// Reconstruct characteristic-function samples and a Wigner grid.
    Reconstruct {
        /// Quadrature CSVs; defaults to every `quadratures_eta_*.csv` in the
        /// output directory.
        inputs: Vec<PathBuf>,
    },
    /// Run the built-in consistency checks.
    Selftest {
        #[arg(long, hide = true)]
        corrupt_prefactor: bool,
    },
}

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub const SELFTEST: u8 = 1;
    pub const CONFIG: u8 = 2;
    pub const OVERFLOW: u8 = 3;
    pub const MISMATCH: u8 = 4;

    pub fn config(e: impl fmt::Display) -> Self {
        Self {
            code: Self::CONFIG,
            message: e.to_string(),
        }
    }

    pub fn mismatch(e: impl fmt::Display) -> Self {
        Self {
            code: Self::MISMATCH,
            message: e.to_string(),
        }
    }

    /// Errors raised while running: overflow keeps its own exit code, the
    /// rest are reported as bad input.
    pub fn run(e: optomirror::Error) -> Self {
        match e {
            optomirror::Error::TruncationOverflow { .. } => Self {
                code: Self::OVERFLOW,
                message: e.to_string(),
            },
            other => Self::config(other),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    if let Command::Selftest { corrupt_prefactor } = cli.command {
        return commands::selftest(corrupt_prefactor);
    }
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| CliError::config("--config <path> is required"))?;
    let cfg = config::load(path)?;
    let mut run = cfg.validate(cli.out_dir.as_deref())?;
    if let Some(seed) = cli.seed {
        run.seed = seed;
    }
    match cli.command {
        Command::Params => commands::params(&run),
        Command::Simulate => commands::simulate(&run, cli.engine),
        Command::Reconstruct { inputs } => commands::reconstruct(&run, &inputs),
        Command::Selftest { .. } => unreachable!(),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
