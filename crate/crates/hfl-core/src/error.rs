//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller violated an operation precondition (bad argument, empty input).
    #[error("usage error: {0}")]
    Usage(String),

    /// Vector/matrix dimensions do not line up.
    #[error("shape error: expected {expected}, got {got} ({context})")]
    Shape {
        expected: usize,
        got: usize,
        context: String,
    },

    /// A file did not match its expected binary or text layout.
    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Invalid or inconsistent experiment configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Training produced a non-finite loss.
    #[error("divergence: non-finite loss at epoch {epoch}")]
    Divergence { epoch: usize },

    /// The Gram matrix of a projection could not be factorized.
    #[error("factorization error: {0}")]
    Factorization(String),

    /// An internal invariant was violated; indicates a bug.
    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn shape(expected: usize, got: usize, context: impl Into<String>) -> Self {
        Error::Shape {
            expected,
            got,
            context: context.into(),
        }
    }

    /// True for errors caused by the caller's input rather than by runtime
    /// failure; the CLI maps these to exit code 1.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Usage(_) | Error::Config(_) | Error::Shape { .. }
        )
    }
}
