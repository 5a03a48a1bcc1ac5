use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

/// Identifies a Gaussian component inside a [`SignalModel`](crate::SignalModel).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComponentId {
    pub class: usize,
    pub component: usize,
}

impl fmt::Display for ComponentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "class {} component {}", self.class, self.component)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite ({context})")]
    NotPositiveDefinite { context: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix of shape {rows}x{cols} has rank {rank}, expected full row rank")]
    RankDeficient {
        rows: usize,
        cols: usize,
        rank: usize,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("unsupported format version {found} (expected {expected})")]
    FormatVersion { found: u32, expected: u32 },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn not_pd(context: impl Into<String>) -> Self {
        Error::NotPositiveDefinite {
            context: context.into(),
        }
    }

    pub(crate) fn component_not_pd(id: ComponentId, what: &str) -> Self {
        Error::NotPositiveDefinite {
            context: format!("{what} of {id}"),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
