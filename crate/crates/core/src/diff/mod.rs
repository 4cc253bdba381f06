//! Reverse-mode automatic differentiation over dense `f64` tensors.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_many, relative_error, REL_ERROR_FLOOR};
pub use tape::{binary_cross_entropy, Gradients, Tape, Var, BCE_CLAMP};
pub use tensor::Tensor;
