//! Reverse-mode automatic differentiation for the small convolutional
//! networks and image losses used by the depth trainer.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles. Calling
//! [`Tape::backward`] walks the recording in reverse and returns the
//! gradient of a scalar output with respect to every node that requires one.
//! Values are `f64` throughout so gradient checks against finite differences
//! stay tight.

mod ops;

pub use ops::spatial::horizontal_tap;
mod tape;
mod tensor;

pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("tensor of shape {shape:?} needs {expected} values, got {actual}")]
    DataLength {
        shape: [usize; 4],
        expected: usize,
        actual: usize,
    },
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: [usize; 4],
        rhs: [usize; 4],
    },
    #[error("{op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },
    #[error("cannot stack an empty list of tensors")]
    EmptyStack,
    #[error("backward needs a scalar output, got shape {0:?}")]
    NonScalarOutput([usize; 4]),
}

pub type Result<T> = std::result::Result<T, Error>;
