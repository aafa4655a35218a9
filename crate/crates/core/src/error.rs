use std::path::PathBuf;

use thiserror::Error;

use crate::geometry::BoxViolation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid box for image `{image_id}` target `{target_id}`: {violation}")]
    InvalidTarget {
        image_id: String,
        target_id: String,
        violation: BoxViolation,
    },

    #[error("invalid box: {0}")]
    InvalidBox(BoxViolation),

    #[error("invalid overlay style: {0}")]
    InvalidStyle(String),

    #[error("empty prompt")]
    EmptyPrompt,

    #[error("replay miss: {0}")]
    ReplayMiss(String),

    #[error("corrupted cache entry {key}: {reason}")]
    CorruptCache { key: String, reason: String },

    #[error("transport error: {0}")]
    Transport(#[from] TransportError),

    #[error("unexpected endpoint response: {0}")]
    BadResponse(String),

    #[error("invalid confidence input: {0}")]
    Confidence(String),

    #[error("backend `{backend_id}` failed: {message}")]
    Backend { backend_id: String, message: String },

    #[error("empty condition")]
    EmptyCondition,

    #[error("condition mismatch: {0}")]
    ConditionMismatch(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
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

    /// Errors that abort a whole run instead of degrading one condition cell.
    pub fn is_fatal(&self) -> bool {
        matches!(
            self,
            Error::ReplayMiss(_) | Error::CorruptCache { .. } | Error::Config(_) | Error::Io { .. }
        )
    }
}

/// Failure reported by an HTTP transport. `transient` errors are retried.
#[derive(Debug, Clone, Error)]
#[error("{message}")]
pub struct TransportError {
    pub message: String,
    pub transient: bool,
}

impl TransportError {
    pub fn transient(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            transient: true,
        }
    }

    pub fn permanent(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            transient: false,
        }
    }
}
