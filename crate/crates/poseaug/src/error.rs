//! Library-wide error type.
//!
//! Operations validate their documented preconditions and return
//! [`Error`] instead of panicking; panics are reserved for internal
//! invariant violations (indexing bugs, not caller mistakes).

use thiserror::Error;

/// Errors surfaced by toolkit operations.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument violated a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Two inputs that must agree in size or labeling do not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A dataset or checkpoint on disk is malformed or inconsistent.
    #[error("format error: {0}")]
    Format(String),

    /// Parameter tying metadata disagrees with the configured model.
    #[error("tie mismatch: {0}")]
    TieMismatch(String),

    /// Underlying I/O failure, with the path that caused it. The cause
    /// is the error source (not repeated in the message), so chained
    /// reporters print it exactly once.
    #[error("io error at {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// PNG encode/decode failure.
    #[error("image error at {path}: {message}")]
    Image { path: String, message: String },
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Build an [`Error::InvalidInput`] from anything displayable.
    pub fn invalid(msg: impl std::fmt::Display) -> Self {
        Error::InvalidInput(msg.to_string())
    }

    /// Build an [`Error::Io`] tagging the offending path.
    pub fn io(path: impl std::fmt::Display, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_string(),
            source,
        }
    }
}
