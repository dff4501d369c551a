use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("alpha must lie strictly inside (1, 2), got {0}")]
    InvalidAlpha(f64),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("evaluation budget exceeded: {0}")]
    Budget(String),

    #[error("not enough usable samples: {0}")]
    InsufficientSamples(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the error stems from invalid input rather than a failure at run time.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidAlpha(_) | Error::Domain(_) | Error::Budget(_) | Error::Config(_)
        )
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }
}
