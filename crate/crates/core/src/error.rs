use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    /// The regularised Gram matrix of one output is not numerically positive definite.
    #[error("cholesky failed for output {output}: pivot {index} is {pivot:e}")]
    Cholesky {
        output: usize,
        index: usize,
        pivot: f64,
    },

    #[error("posterior variance {value:e} for output {output} is below the cancellation threshold")]
    NegativeVariance { output: usize, value: f64 },

    #[error("hyperparameter optimisation failed: every restart hit a singular Gram matrix")]
    OptimizationFailed,

    #[error("mass matrix factorisation failed: {0}")]
    Factorization(String),

    #[error("aerodynamic table does not cover angle {0} deg")]
    TableCoverage(f64),

    #[error("invalid table: {0}")]
    InvalidTable(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("simulation diverged at t = {time}")]
    Divergence { time: f64 },

    #[error("{0}")]
    Precondition(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit code: 1 for configuration and input problems, 2 for
    /// numerical failures, 3 for divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parse { .. } | Error::Io { .. } | Error::Precondition(_) => 1,
            Error::Divergence { .. } => 3,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}
