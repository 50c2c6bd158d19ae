//! `gamepl` — generate partial-label benchmarks, train the two-player game
//! or a baseline loss, evaluate checkpoints, and sweep settings.
//!
//! Exit codes: 0 success, 2 usage error, 3 numerical failure (divergence),
//! 4 I/O or parse failure.

use std::process::ExitCode;

use clap::Parser;
use thiserror::Error;

mod args;
mod config;
mod manifest;
mod runner;
mod sweep;

use args::{Cli, Command};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Io(String),
}

impl From<gamepl::Error> for CliError {
    fn from(e: gamepl::Error) -> Self {
        match e {
            gamepl::Error::Argument(_) | gamepl::Error::Dimension(_) => {
                CliError::Usage(e.to_string())
            }
            gamepl::Error::Diverged { .. } => CliError::Numerical(e.to_string()),
            gamepl::Error::Io(_) | gamepl::Error::Parse { .. } | gamepl::Error::Serde(_) => {
                CliError::Io(e.to_string())
            }
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Gen(args) => runner::cmd_gen(args),
        Command::Train(args) => runner::cmd_train(args).map(|_| ()),
        Command::Eval(args) => runner::cmd_eval(args).map(|_| ()),
        Command::Sweep(args) => sweep::cmd_sweep(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
