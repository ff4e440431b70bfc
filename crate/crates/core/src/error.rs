use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use crate::volume::Axis;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("box out of bounds on axis {axis}: origin {origin} + size {size} exceeds extent {extent}")]
    OutOfBounds {
        axis: Axis,
        origin: usize,
        size: usize,
        extent: usize,
    },

    #[error("extent {extent} on axis {axis} is not divisible by the required stride {divisor}")]
    Indivisible { axis: Axis, extent: usize, divisor: usize },

    #[error("shape mismatch in {context}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid orientation code {0:?}")]
    InvalidOrientation(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch} (scans {scans:?})")]
    Divergence {
        epoch: usize,
        batch: usize,
        scans: Vec<String>,
    },

    #[error("{0}")]
    Observer(String),

    #[error("fold {fold}: {source}")]
    Fold { fold: usize, source: Box<Error> },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(context: &'static str, expected: &[usize], found: &[usize]) -> Self {
        Error::ShapeMismatch {
            context,
            expected: expected.to_vec(),
            found: found.to_vec(),
        }
    }

    /// True for failures caused by numerical blow-up rather than bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Divergence { .. } => true,
            Error::Fold { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
