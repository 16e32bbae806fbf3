use super::kernels::{self, Axis};
use super::tensor::Tensor;

/// Operation set shared by eager evaluation and the recording tape.
///
/// Solver and network code is written once against this trait. Running it
/// with [`Eager`] computes values only; running it with a
/// [`Tape`](super::Tape) records the same arithmetic for reverse-mode
/// differentiation.
pub trait Backend {
    type Value: Clone;

    fn constant(&mut self, t: Tensor) -> Self::Value;
    fn value<'a>(&'a self, v: &'a Self::Value) -> &'a Tensor;

    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Self::Value;
    fn sub(&mut self, a: &Self::Value, b: &Self::Value) -> Self::Value;
    fn mul(&mut self, a: &Self::Value, b: &Self::Value) -> Self::Value;
    fn div(&mut self, a: &Self::Value, b: &Self::Value) -> Self::Value;
    fn scale(&mut self, a: &Self::Value, c: f64) -> Self::Value;
    fn offset(&mut self, a: &Self::Value, c: f64) -> Self::Value;
    fn square(&mut self, a: &Self::Value) -> Self::Value;
    fn relu(&mut self, a: &Self::Value) -> Self::Value;
    fn clamp(&mut self, a: &Self::Value, lo: f64, hi: f64) -> Self::Value;
    fn diff(&mut self, a: &Self::Value, axis: Axis) -> Self::Value;
    fn diff_adjoint(&mut self, a: &Self::Value, axis: Axis) -> Self::Value;
    /// Singular value thresholding of the `rows x cols` row-major view.
    fn svt(&mut self, a: &Self::Value, rows: usize, cols: usize, tau: f64) -> Self::Value;
    fn conv3d(&mut self, x: &Self::Value, kernel: &Self::Value) -> Self::Value;
    fn channel_bias(&mut self, x: &Self::Value, bias: &Self::Value) -> Self::Value;
    fn softmax_scaled(&mut self, a: &Self::Value) -> Self::Value;
    fn mse(&mut self, a: &Self::Value, b: &Self::Value) -> Self::Value;
    fn sum(&mut self, a: &Self::Value) -> Self::Value;
}

/// Plain evaluation with no recording.
#[derive(Clone, Copy, Debug, Default)]
pub struct Eager;

pub(crate) fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

impl Backend for Eager {
    type Value = Tensor;

    fn constant(&mut self, t: Tensor) -> Tensor {
        t
    }

    fn value<'a>(&'a self, v: &'a Tensor) -> &'a Tensor {
        v
    }

    fn add(&mut self, a: &Tensor, b: &Tensor) -> Tensor {
        a.zip_map(b, |x, y| x + y)
    }

    fn sub(&mut self, a: &Tensor, b: &Tensor) -> Tensor {
        a.zip_map(b, |x, y| x - y)
    }

    fn mul(&mut self, a: &Tensor, b: &Tensor) -> Tensor {
        a.zip_map(b, |x, y| x * y)
    }

    fn div(&mut self, a: &Tensor, b: &Tensor) -> Tensor {
        a.zip_map(b, |x, y| x / y)
    }

    fn scale(&mut self, a: &Tensor, c: f64) -> Tensor {
        a.map(|x| x * c)
    }

    fn offset(&mut self, a: &Tensor, c: f64) -> Tensor {
        a.map(|x| x + c)
    }

    fn square(&mut self, a: &Tensor) -> Tensor {
        a.map(|x| x * x)
    }

    fn relu(&mut self, a: &Tensor) -> Tensor {
        a.map(relu)
    }

    fn clamp(&mut self, a: &Tensor, lo: f64, hi: f64) -> Tensor {
        a.map(|x| x.clamp(lo, hi))
    }

    fn diff(&mut self, a: &Tensor, axis: Axis) -> Tensor {
        kernels::diff_forward(a, axis)
    }

    fn diff_adjoint(&mut self, a: &Tensor, axis: Axis) -> Tensor {
        kernels::diff_adjoint(a, axis)
    }

    fn svt(&mut self, a: &Tensor, rows: usize, cols: usize, tau: f64) -> Tensor {
        let (out, _) = kernels::svt_forward(a.data(), rows, cols, tau);
        Tensor::from_parts(a.shape().to_vec(), out)
    }

    fn conv3d(&mut self, x: &Tensor, kernel: &Tensor) -> Tensor {
        kernels::conv3d_forward(x, kernel)
    }

    fn channel_bias(&mut self, x: &Tensor, bias: &Tensor) -> Tensor {
        kernels::channel_bias_forward(x, bias)
    }

    fn softmax_scaled(&mut self, a: &Tensor) -> Tensor {
        kernels::softmax_scaled_forward(a)
    }

    fn mse(&mut self, a: &Tensor, b: &Tensor) -> Tensor {
        Tensor::scalar(kernels::mse(a, b))
    }

    fn sum(&mut self, a: &Tensor) -> Tensor {
        Tensor::scalar(a.data().iter().sum())
    }
}
