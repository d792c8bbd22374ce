use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid user-supplied configuration (tables, bounds, dimensions, flags).
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller broke an operation's contract (mismatched policy class, missing annotations).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("dataset is empty")]
    EmptyDataset,

    /// All importance weights vanished; the estimate is undefined.
    #[error("importance weights are degenerate: {0}")]
    Degenerate(String),

    /// The joint state space is too large to enumerate exactly.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    /// The requested confidence cannot be reached within the search range.
    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    /// True for errors caused by bad input rather than by a failure while running.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Parse { .. } | Error::Json(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
