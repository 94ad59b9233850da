use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the model, sampler and I/O layers.
///
/// Impossible latent configurations are *not* errors: the density evaluators
/// return `f64::NEG_INFINITY` for those so samplers can reject them.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("data validation failed: {0}")]
    Validation(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("sampler initialization failed: {0}")]
    Initialization(String),

    #[error("sampler invariant violated: {0}")]
    Invariant(String),

    #[error("diagnostics precondition failed: {0}")]
    Diagnostics(String),

    #[error("unknown label `{label}`; available: {available}")]
    UnknownLabel { label: String, available: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit status for this error class: 2 for bad input, 3 for
    /// sampler failures, 4 for diagnostics preconditions.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Initialization(_) | Error::Invariant(_) => 3,
            Error::Diagnostics(_) => 4,
            _ => 2,
        }
    }
}
