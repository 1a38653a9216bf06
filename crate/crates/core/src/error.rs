//! Error type shared by every module in this crate.
//!
//! The split between variants matters to callers: the CLI maps
//! [`Error::Config`] and [`Error::Usage`] to exit code 2 and everything
//! else to exit code 1, so constructors must pick the variant that
//! reflects *when* the problem became detectable (bad inputs up front vs.
//! a failure while working).

use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Two operands that must agree in shape (width/height/channels/spacing) do not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A scalar argument is outside its documented domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// An operation produced or encountered a non-finite value it cannot represent.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Structurally invalid input that is not a simple shape or domain issue.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// A configuration file or config-derived object failed validation.
    #[error("config error: {0}")]
    Config(String),

    /// Command-line usage error (unknown flag combinations, missing arguments).
    #[error("usage error: {0}")]
    Usage(String),

    /// Malformed on-disk data (bad magic, truncated payload, out-of-range samples).
    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    /// Underlying filesystem failure, annotated with the path involved.
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// True for errors that indicate a bad configuration or bad invocation
    /// rather than a runtime failure.
    pub fn is_config_or_usage(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Usage(_))
    }
}
