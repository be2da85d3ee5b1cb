use std::path::PathBuf;

use thiserror::Error;

use crate::oracle::OracleError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("parse error in {path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("mesh has no UV parameterization")]
    MissingUv,

    #[error("degenerate mesh: {0}")]
    DegenerateMesh(String),

    #[error("degenerate weights: sum of squared weights under the mask is zero")]
    DegenerateWeights,

    #[error("non-finite gradient in {what} at index {index}: {value}")]
    NonFiniteGradient {
        what: &'static str,
        index: usize,
        value: f32,
    },

    #[error("too many oracle failures: {skipped} of {attempted} views skipped")]
    TooManySkippedViews { skipped: usize, attempted: usize },

    #[error(transparent)]
    Oracle(#[from] OracleError),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
