//! Command-line front end: model validation, trajectories, ensembles, master
//! equation runs and the fluorescence observables.
//!
//! Exit status: 0 success, 1 usage, 2 validation, 3 numerical failure.
//! `HYBRID_PDP_WORKERS` sets the worker count of the parallel ensemble.

mod commands;
mod error;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use crate::commands::Cli;

/// Environment variable overriding the number of ensemble workers.
pub const WORKERS_ENV: &str = "HYBRID_PDP_WORKERS";

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let workers = match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.parse::<usize>() {
            Ok(n) if n > 0 => Some(n),
            _ => {
                eprintln!("error: {WORKERS_ENV} must be a positive integer, got `{v}`");
                return ExitCode::from(1);
            }
        },
        Err(_) => None,
    };
    let run = || commands::run(cli, argv[1..].to_vec(), None);
    let result = match workers {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(run),
            Err(e) => {
                eprintln!("error: cannot start {n} workers: {e}");
                return ExitCode::from(3);
            }
        },
        None => run(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
