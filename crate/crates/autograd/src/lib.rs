//! Dense `f64` tensors and a tape-based reverse-mode differentiation engine
//! sized for small sequence-regression networks with physics residual terms.
//!
//! Values are row-major [`Tensor`]s; every op on a [`Graph`] checks its
//! output for non-finite values and fails with a [`TensorError`] naming the
//! op instead of propagating NaN.

pub mod error;
pub mod gradcheck;
pub mod graph;
mod kernels;
pub mod tensor;

pub use error::{Result, TensorError};
pub use graph::{Gradients, Graph, NormAxis, Var};
pub use tensor::Tensor;
