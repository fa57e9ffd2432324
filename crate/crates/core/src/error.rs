use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A malformed input file. `line` is 1-based.
    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("{0}: no rows")]
    NoRows(String),

    #[error("dimension mismatch: expected {expected}, got {found}")]
    Dimension { expected: usize, found: usize },

    #[error("vocabulary mismatch at row {index}: `{left}` vs `{right}`")]
    Vocabulary {
        index: usize,
        left: String,
        right: String,
    },

    #[error("singular normal equations at lambda = {lambda}; use lambda > 0")]
    Singular { lambda: f64 },

    #[error("dispersion undefined for `{word}`: {images} image(s), need at least 2")]
    DispersionUndefined { word: String, images: usize },

    #[error("non-finite training loss (lr {lr}, epoch {epoch}, batch {batch}); parameter norms {norms:?}")]
    NonFiniteLoss {
        lr: f64,
        epoch: usize,
        batch: usize,
        norms: Vec<f64>,
    },

    #[error("invalid argument: {0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(source_name: &str, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            source_name: source_name.to_string(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::Invalid(message.into())
    }

    /// Process exit code: 2 for IO and usage problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 2,
            _ => 1,
        }
    }
}
