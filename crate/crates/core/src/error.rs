use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("vocabulary mismatch: expected {expected} entries, got {actual}")]
    VocabMismatch { expected: usize, actual: usize },

    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenOutOfRange { id: usize, size: usize },

    #[error("context of {needed} tokens exceeds backend limit of {limit}")]
    ContextTooLong { needed: usize, limit: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("backend error after {attempts} attempt(s): {message}")]
    Backend { attempts: u32, message: String },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("malformed model spec: {0}")]
    Spec(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Errors raised by a model backend rather than by the caller's input.
    pub fn is_backend(&self) -> bool {
        matches!(self, Error::Backend { .. } | Error::Protocol(_))
    }
}
