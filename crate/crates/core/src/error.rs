use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("state outside the admissible domain: {0}")]
    Domain(String),

    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NewtonDiverged { iterations: usize, residual: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),

    #[error("parse error in {section}: {message}")]
    Parse { section: String, message: String },

    #[error("structural invariant violated: {0}")]
    Structure(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

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

    pub(crate) fn parse(section: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            section: section.into(),
            message: message.into(),
        }
    }
}

/// Returns a [`Error::Dimension`] unless `got == expected`.
pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            got,
        })
    }
}
