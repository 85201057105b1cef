//! Command-line front end for `tumble-core`: configuration files, parallel
//! drivers over simulation batches and Feynman–Kac groups, CSV and JSON
//! artifacts, and the acceptance verification matrix.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod output;
pub mod parallel;
pub mod verify;

use std::path::PathBuf;

pub use config::{ConfigError, RunConfig};

/// Failure of a command, with its process exit code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("numerical failure: {0}")]
    Numerical(#[from] tumble_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("could not encode JSON: {0}")]
    Json(#[from] serde_json::Error),

    #[error("thread pool: {0}")]
    ThreadPool(#[from] rayon::ThreadPoolBuildError),

    #[error("acceptance failed: {}", .0.join("; "))]
    Acceptance(Vec<String>),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// 2 for configuration errors, 3 for numerical failures and output
    /// problems, 4 for failed acceptance criteria.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Acceptance(_) => 4,
            _ => 3,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
