use std::path::PathBuf;

use thiserror::Error;

use crate::palm::SolveTrace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("matrix contains non-finite entries")]
    NonFinite,

    #[error("singular value decomposition failed to converge")]
    Decomposition,

    #[error("inner dimension {d} is smaller than the numerical rank {rank}")]
    Infeasible { rank: usize, d: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("solver diverged at iteration {iteration}: objective is not finite")]
    Divergence {
        iteration: usize,
        trace: Box<SolveTrace>,
    },

    /// The objective increased after a plain (non-extrapolated, full Lipschitz) cycle,
    /// which the proximal descent property rules out.
    #[error("objective increased from {before} to {after} on a safeguarded cycle")]
    InternalConsistency { before: f64, after: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
