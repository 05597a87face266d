//! Scenario-driven command line front end.
//!
//! Exit codes: 0 success, 2 scenario validation error, 3 numerical failure,
//! 4 hypothesis check failed (report still written).

mod runner;
mod scenario;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use runner::{NumericalFailure, RunOverrides};

#[derive(Parser)]
#[command(name = "nonholo", version, about = "Nonholonomic mechanics laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory for reports and trajectory data.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the adaptive integrator's relative tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Suppress progress output.
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a scenario and run its analyses.
    Run(CommonArgs),
    /// Run the conservation-hypothesis checkers for the scenario's frame.
    Check(CommonArgs),
    /// Run a parameter sweep; one report row per grid point.
    Sweep(CommonArgs),
    /// Print the version.
    Version,
}

impl CommonArgs {
    fn overrides(&self) -> RunOverrides {
        RunOverrides {
            seed: self.seed,
            tol: self.tol,
            quiet: self.quiet,
        }
    }
}

fn classify_failure(e: &anyhow::Error) -> u8 {
    // Numerical failures exit 3; everything else is a validation problem.
    if e.chain().any(|c| c.is::<NumericalFailure>()) {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Version => {
            println!("nonholo {}", env!("CARGO_PKG_VERSION"));
            ExitCode::SUCCESS
        }
        Command::Run(args) => {
            match runner::run_scenario(&args.scenario, &args.out, &args.overrides()) {
                Ok(_) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::from(classify_failure(&e))
                }
            }
        }
        Command::Check(args) => {
            match runner::check_hypotheses(&args.scenario, &args.out, &args.overrides()) {
                Ok((true, _)) => ExitCode::SUCCESS,
                Ok((false, path)) => {
                    eprintln!("hypothesis check failed; report at {}", path.display());
                    ExitCode::from(4)
                }
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::from(classify_failure(&e))
                }
            }
        }
        Command::Sweep(args) => {
            match runner::run_sweep(&args.scenario, &args.out, &args.overrides()) {
                Ok(_) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::from(classify_failure(&e))
                }
            }
        }
    }
}
