//! Neural Bag-of-Features sequence classification with 2D-attention and
//! self-attention variants, trained with hand-written gradients.
//!
//! Pipeline: optional temporal-convolution frontend → RBF codebook
//! quantization → attention → temporal averaging → affine classifier.

pub mod attention;
mod container;
pub mod data;
pub mod error;
pub mod export;
pub mod model;
pub mod nbof;
pub mod numerics;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
pub use numerics::Matrix;
