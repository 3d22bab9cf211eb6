//! `diffprox` command-line tool.
//!
//! Exit codes: 0 success, 2 invalid input, 3 nondifferentiable point or
//! solver failure, 4 planning failure.

mod commands;
mod report;
mod scene;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use diffprox::SolverOptions;

/// Environment variable overriding the interior-point tolerance.
pub const TOL_ENV: &str = "DIFFPROX_TOL";

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Solver(String),
    Planning(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Planning(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Solver(m) | CliError::Planning(m) => m,
        }
    }
}

impl From<diffprox::Error> for CliError {
    fn from(e: diffprox::Error) -> Self {
        match e {
            diffprox::Error::InvalidArgument(_) => CliError::Validation(e.to_string()),
            diffprox::Error::PlanningFailure { .. } => CliError::Planning(e.to_string()),
            _ => CliError::Solver(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "diffprox", version, about = "Differentiable proximity queries and trajectory planning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Proximity value and closest points of a two-body scene.
    Proximity { scene: PathBuf },
    /// Proximity value and its derivatives with respect to both poses.
    Jacobians { scene: PathBuf },
    /// Compare analytic derivatives against central differences.
    Checkgrad {
        scene: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        step: f64,
    },
    /// Plan a collision-free car trajectory and write it as CSV.
    Plan {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn solver_options() -> Result<SolverOptions, CliError> {
    let mut options = SolverOptions::default();
    if let Ok(raw) = std::env::var(TOL_ENV) {
        let tol: f64 = raw
            .trim()
            .parse()
            .map_err(|_| CliError::Validation(format!("{TOL_ENV}={raw:?} is not a number")))?;
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(CliError::Validation(format!("{TOL_ENV} must be positive, got {tol}")));
        }
        options.tol = tol;
    }
    Ok(options)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let options = solver_options()?;
    match cli.command {
        Command::Proximity { scene } => commands::proximity(&scene, &options),
        Command::Jacobians { scene } => commands::jacobians(&scene, &options),
        Command::Checkgrad { scene, step } => commands::checkgrad(&scene, step, &options),
        Command::Plan { config, out } => commands::plan(&config, &out, &options),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
