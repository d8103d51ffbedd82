use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    SolverFailure { iterations: usize, residual: f64 },

    /// The aperture family leaves some frequency direction unseen.
    #[error("stability condition violated: ellipticity margin {margin:e} is not positive")]
    StabilityViolation { margin: f64 },

    #[error("all symbols vanish in direction {0:?}")]
    UndefinedDirection(Vec<f64>),

    #[error("operator failed the adjoint dot-test (relative mismatch {0:e})")]
    InvalidOperator(f64),

    #[error("no cell of the reference field exceeds the background level {0}")]
    EmptyMask(f64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed field file: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
