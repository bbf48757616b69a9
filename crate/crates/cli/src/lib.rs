//! Command-line driver for the analysis, pruning and fuzzing pipeline.
//!
//! Every subcommand is reachable as a library call through [`run`], which
//! returns the process exit status.

mod args;
mod commands;
pub mod config;
pub mod corpus_dir;
pub mod load;
pub mod pipeline;

use std::ffi::OsString;

use clap::Parser;
use pathprune_fuzz::FuzzError;

pub use args::Cli;

/// Exit status for usage errors: bad flags, missing files, bad config.
pub const EXIT_USAGE: i32 = 1;
/// Exit status for invalid programs, unknown targets and mismatched corpora.
pub const EXIT_VALIDATION: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Validation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Validation(_) => EXIT_VALIDATION,
        }
    }
}

impl From<pathprune_core::Error> for CliError {
    fn from(e: pathprune_core::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<FuzzError> for CliError {
    fn from(e: FuzzError) -> Self {
        match e {
            FuzzError::Core(e) => e.into(),
            other => CliError::Usage(other.to_string()),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

/// Parses `argv` (including the program name), runs the command and returns
/// the exit status. Errors are reported on stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
