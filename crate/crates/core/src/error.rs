//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Two operands (or an operand and an operator) disagree on shape.
    #[error("shape mismatch in {context}: {left} vs {right}")]
    ShapeMismatch {
        context: String,
        left: String,
        right: String,
    },

    /// An argument violates a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Scan geometry is degenerate or inconsistent with its inputs.
    #[error("invalid geometry: {0}")]
    Geometry(String),

    /// An iterative solver or training run produced non-finite values or
    /// failed to make progress.
    #[error("numerical fault: {0}")]
    Numerical(String),

    /// A file did not match the expected on-disk format.
    #[error("bad file format: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape_mismatch(
        context: impl Into<String>,
        left: impl std::fmt::Debug,
        right: impl std::fmt::Debug,
    ) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            left: format!("{left:?}"),
            right: format!("{right:?}"),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
