//! Small reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records one forward evaluation; [`Tape::backward`] returns the
//! gradient of a scalar output with respect to every leaf created with
//! [`Tape::var`]. Leaves created with [`Tape::constant`] are skipped, which
//! keeps sampler gradients (input-only) cheap.

mod check;
mod tape;
mod tensor;

pub use check::grad_check;
pub use tape::{sigmoid, softplus, Gradients, Tape, Var};
pub use tensor::Tensor;
