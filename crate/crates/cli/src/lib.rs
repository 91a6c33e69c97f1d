//! Command-line front end: subcommands for each stage and a manifest-driven pipeline
//! with hashed, cached intermediates and deterministic JSON/CSV reports.

pub mod args;
pub mod commands;
pub mod io;
pub mod pipeline;
pub mod reports;

use std::path::PathBuf;

pub use args::Cli;

/// Environment variable that overrides the cache directory.
pub const CACHE_DIR_ENV: &str = "TRAPKIT_CACHE_DIR";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("missing input: {what} ({path})")]
    MissingInput { what: String, path: PathBuf },
    #[error("stale cache {path}: built from {recorded}, current input hashes to {current}")]
    StaleCache { path: PathBuf, recorded: String, current: String },
    #[error("stage `{stage}` failed: {source:#}")]
    Stage { stage: String, source: anyhow::Error },
    #[error("{0}")]
    Usage(String),
    #[error("{0:#}")]
    Other(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::MissingInput { .. } => 3,
            CliError::StaleCache { .. } => 4,
            CliError::Stage { .. } => 5,
            CliError::Usage(_) => 2,
            CliError::Other(_) => 1,
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    commands::dispatch(cli.command)
}
