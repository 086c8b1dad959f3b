//! Reverse-mode automatic differentiation on dense tensors.
//!
//! Tensors are immutable value holders; every operation allocates a fresh
//! node that records its parents and a backward closure. `Tensor::backward`
//! walks the resulting DAG once in reverse topological order and accumulates
//! gradients into leaf parameters. All math is in `f64`; an optional global
//! switch routes the matrix-multiply kernels through `f32` for speed (never
//! used by the gradient-check suites).

mod gradcheck;
mod kernels;
mod linalg;
mod ops;
mod sample;
mod tensor;

pub use gradcheck::{finite_diff_gradient, gradcheck, GradCheckConfig, GradReport};
pub use kernels::{compute_in_f32, set_compute_f32};
pub use linalg::svd3_parts;
pub use ops::concat;
pub use tensor::{Tensor, TensorError};

pub(crate) use linalg::det3;
pub(crate) use tensor::BackwardFn;
