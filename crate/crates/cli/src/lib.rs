//! Library side of the `exswitch` binary: argument parsing, config
//! resolution, the three subcommands and run manifests.

pub mod args;
pub mod commands;
pub mod config;
pub mod manifest;

use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] exswitch::Error),

    #[error("{tail}training diverged: {source}")]
    Diverged {
        source: exswitch::Error,
        tail: String,
    },

    #[error("{failed} of {total} acceptance criteria failed")]
    VerifyFailed { failed: usize, total: usize },

    #[error("{0}")]
    Run(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 2 for bad input, 3 for divergence, 4 for failed criteria, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Diverged { .. } => 3,
            Self::VerifyFailed { .. } => 4,
            _ => 1,
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::Run(format!("csv: {e}"))
    }
}
