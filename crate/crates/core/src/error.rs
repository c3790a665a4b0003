use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the allocation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    /// Target rate vector lies outside the hull of the vertex rate vectors.
    #[error("target outside rate hull: user {user} misses by {violation:.3e}")]
    OutsideHull { user: usize, violation: f64 },

    #[error("solver did not converge after {iterations} iterations (kkt residual {residual:.3e}, gap {gap:.3e})")]
    NotConverged {
        iterations: usize,
        residual: f64,
        gap: f64,
    },

    #[error("vertex enumeration needs {required} permutations, cap is {cap}; tighten tie_tol")]
    EnumerationCap { required: usize, cap: usize },

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
