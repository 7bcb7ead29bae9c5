use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("threshold rules violated: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Thresholds(Vec<crate::vpr_builder::ThresholdViolation>),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("protocol error at byte offset {offset}: {message}")]
    Protocol { offset: u64, message: String },

    #[error("receive buffer overflow after frame {received} (capacity {capacity})")]
    BufferOverflow { received: u64, capacity: usize },

    #[error("write failed after {persisted} durable frames: {source}")]
    Persist {
        persisted: u64,
        #[source]
        source: std::io::Error,
    },

    #[error("session startup failed: {0}")]
    Startup(String),

    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

/// Adds a path/context string to `std::io` results.
pub(crate) trait IoContext<T> {
    fn ctx(self, context: impl FnOnce() -> String) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn ctx(self, context: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|e| Error::io(context(), e))
    }
}
