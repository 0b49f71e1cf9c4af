use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum SdrError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("invalid dataset: {0}")]
    Validation(String),

    #[error("column '{0}' has zero variance")]
    ConstantColumn(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("{kind} requires d = 1, got d = {d}")]
    KindMismatch { kind: &'static str, d: usize },

    #[error("non-finite objective value at gradient entry ({row}, {col})")]
    NonFiniteProbe { row: usize, col: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("singular anchor block; rows tried: {0:?}")]
    SingularAnchor(Vec<Vec<usize>>),

    #[error("bootstrap failed: {failed} of {total} replicates could not be fit or normalized")]
    BootstrapFailures { failed: usize, total: usize },

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, SdrError>;
