//! Dense matrices, differentiable primitives and the gradient checker.

mod gradcheck;
mod matrix;
pub mod ops;

pub use gradcheck::{grad_check, grad_check_seeded, GradCheckReport};
pub use matrix::{dot, logit, sigmoid, softmax_in_place, softplus, softplus_inv, Matrix};
pub use ops::DiffOp;
