use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid privacy budget {0}: epsilon must be finite and positive")]
    InvalidBudget(f64),

    #[error("invalid output count {0}")]
    InvalidOutputCount(usize),

    #[error("input {0} lies outside [-1, 1]")]
    Domain(f64),

    #[error("output index {index} out of range for {n_outputs} outputs")]
    IndexOutOfRange { index: i64, n_outputs: usize },

    #[error("invalid mechanism design: {0}")]
    InvalidDesign(String),

    #[error("invalid parameters: {0}")]
    InvalidParameters(String),

    #[error("grid ordering violated: {0}")]
    Ordering(String),

    #[error("solver failed for N = {n_outputs}: {reason}")]
    Solver { n_outputs: usize, reason: String },

    #[error("no feasible design found: {0}")]
    Infeasible(String),

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("bin edges do not match")]
    EdgeMismatch,

    #[error("data error: {0}")]
    Data(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
