use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Two operands disagree on shape. Both shapes are rendered into the message.
    #[error("{op}: shape mismatch, expected {expected}, got {found}")]
    Shape {
        op: &'static str,
        expected: String,
        found: String,
    },

    /// A structural parameter (groups, stride, reduction, ...) is invalid.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Input data violates a documented precondition.
    #[error("validation failed: {0}")]
    Validation(String),

    /// A numerical failure during training or evaluation (NaN/Inf loss).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Malformed file contents (weights, images, manifests).
    #[error("{}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Error::Shape {
            op,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

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

    /// True for errors caused by user input or configuration, as opposed to
    /// numerical failures at run time.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Numerical(_))
    }
}
