//! `quasimeas`: run, reproduce and sweep selective-measurement simulations.
//!
//! Exit codes: 0 success, 1 usage, I/O or integration error, 2 a physics check failed.

mod config;
mod error;
mod output;
mod reproduce;
mod run;
mod sweep;

use std::num::NonZeroUsize;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Overrides;
use error::CliError;
use reproduce::Figure;

#[derive(Debug, Parser)]
#[command(name = "quasimeas", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Seed for branch sampling and randomized checks.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Relative tolerance of the integrator.
    #[arg(long, global = true)]
    rtol: Option<f64>,
    /// Absolute tolerance of the integrator.
    #[arg(long, global = true)]
    atol: Option<f64>,
    /// End of the integration window in seconds.
    #[arg(long = "t-end", global = true)]
    t_end: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one scenario; writes trajectory.csv and summary.json.
    Run {
        config: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Run both branches of a figure preset and compare the endpoints.
    Reproduce {
        #[arg(value_enum)]
        figure: Figure,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Run the grid in the config's [sweep] table; writes sweep.csv.
    Sweep {
        config: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Worker threads.
        #[arg(long, default_value = "1")]
        jobs: NonZeroUsize,
    },
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let overrides = Overrides {
        seed: cli.seed,
        rtol: cli.rtol,
        atol: cli.atol,
        t_end: cli.t_end,
    };
    match cli.command {
        Command::Run { config, output } => run::cmd_run(&config, &output, &overrides),
        Command::Reproduce { figure, output } => {
            reproduce::cmd_reproduce(figure, &output, &overrides)
        }
        Command::Sweep {
            config,
            output,
            jobs,
        } => sweep::cmd_sweep(&config, &output, jobs.get(), &overrides),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // clap uses 2 for usage errors; 2 is reserved for failed checks here.
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
