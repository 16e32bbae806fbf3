//! Minimal reverse-mode differentiation for the unrolled solver and the
//! hyper-weight network.
//!
//! Only the operations those two need are supported: elementwise arithmetic,
//! clamping, forward differences, SVT, 3-D convolution, channel bias,
//! whole-tensor softmax and scalar reductions.

mod backend;
mod gradcheck;
pub mod kernels;
mod tape;
mod tensor;

pub use backend::{Backend, Eager};
pub use gradcheck::{grad_check, grad_check_with, DENOMINATOR_FLOOR};
pub use kernels::Axis;
pub use tape::{Gradients, Tape, Var, DEFAULT_EPS_SVD};
pub use tensor::Tensor;


/// Adjoint of singular value thresholding for a row-major `rows x cols`
/// matrix, recomputing the SVD of `a`.
pub fn svt_backward(a: &[f64], rows: usize, cols: usize, tau: f64, cotangent: &[f64]) -> Vec<f64> {
    let (_, factors) = kernels::svt_forward(a, rows, cols, tau);
    kernels::svt_backward(&factors, tau, cotangent, DEFAULT_EPS_SVD)
}
