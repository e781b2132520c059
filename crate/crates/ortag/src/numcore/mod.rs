//! Dense-tensor numeric core with tape-based reverse-mode differentiation.
//!
//! Everything the neural layers need is built from the primitives recorded
//! here: each op validates shapes, computes its forward value, and knows how
//! to push gradients back to its inputs. A [`Tape`] owns one computation
//! graph; [`grad_check`] verifies any composite against central finite
//! differences.
//!
//! All math is `f64`. Tensors that are not registered on a tape are plain
//! immutable values and safe to share across threads.

mod gradcheck;
mod tape;
mod tensor;

#[cfg(test)]
mod tests;

pub use gradcheck::{grad_check, grad_check_multi};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumError {
    /// Input shapes do not conform to the op's rules.
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },
    /// Bad hyperparameter (e.g. dropout probability out of `[0, 1)`).
    #[error("configuration error: {0}")]
    Config(String),
    /// API misuse (e.g. backward from a non-scalar).
    #[error("contract violation: {0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, NumError>;

pub(crate) fn shape_err(op: &'static str, detail: String) -> NumError {
    NumError::Shape { op, detail }
}
