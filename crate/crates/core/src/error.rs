use std::path::PathBuf;

/// Errors surfaced by the sanitization pipeline.
#[derive(Debug, thiserror::Error)]
#[non_exhaustive]
pub enum Error {
    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("documents misaligned at document {doc_id}: {message}")]
    Misaligned { doc_id: u64, message: String },

    #[error("cache file is stale or incompatible: {0}")]
    StaleCache(String),

    #[error("invalid alpha for Renyi entropy: {0}")]
    InvalidAlpha(f64),

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

    pub(crate) fn config(message: impl Into<String>) -> Self {
        Error::Config(message.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
