//! A compact reverse-mode automatic differentiation engine over dense `f64`
//! tensors, sized for training small convolutional models on the CPU.
//!
//! Heavy kernels (convolution, resampling, broadcasting) split their work
//! over the batch or channel axis with rayon when the `parallel` feature is
//! enabled, and run the identical code sequentially otherwise.

pub mod check;
mod error;
pub mod exec;
mod graph;
mod ops;
pub mod optim;
mod params;
mod tensor;

pub use error::{Result, TensorError};
pub use graph::{BackwardArgs, Gradients, Var};
pub use ops::{broadcast_shape, broadcast_to, reduce_to, resize_bilinear_tensor, Conv2dSpec, NORM_EPS};
pub use optim::{AdamW, AdamWConfig};
pub use params::{Binding, Param, ParamId, ParamStore};
pub use tensor::Tensor;

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    ops::sigmoid_f(x)
}

/// Row-major matrix product `a (m x k) * b (k x n)` of plain slices.
pub fn matmul(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    ops::gemm(m, k, n, a, false, b, false, &mut c, 0.0);
    c
}
