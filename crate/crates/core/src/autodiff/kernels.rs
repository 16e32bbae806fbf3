//! Forward and adjoint kernels shared by the eager backend and the tape.
//!
//! Every forward routine here is the single source of arithmetic for both
//! execution modes, which is what makes taped and untaped runs agree bitwise.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;

/// Axis of a `[.., height, width, bands]` volume along which forward
/// differences are taken.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    Height,
    Width,
    Band,
}

fn axis_geometry(t: &Tensor, axis: Axis) -> (usize, usize, usize) {
    // (outer, extent, inner): element index = (o * extent + a) * inner + r
    let (c, h, w, b) = t.volume_dims();
    match axis {
        Axis::Height => (c, h, w * b),
        Axis::Width => (c * h, w, b),
        Axis::Band => (c * h * w, b, 1),
    }
}

/// Forward difference `x[a+1] - x[a]` along `axis`; the last slice is zero.
pub fn diff_forward(x: &Tensor, axis: Axis) -> Tensor {
    let (outer, n, inner) = axis_geometry(x, axis);
    let src = x.data();
    let mut out = vec![0.0; src.len()];
    for o in 0..outer {
        for a in 0..n.saturating_sub(1) {
            let base = (o * n + a) * inner;
            let next = base + inner;
            for r in 0..inner {
                out[base + r] = src[next + r] - src[base + r];
            }
        }
    }
    Tensor::from_parts(x.shape().to_vec(), out)
}

/// Adjoint of [`diff_forward`]: `p[a-1] - p[a]` with the boundary terms dropped.
pub fn diff_adjoint(p: &Tensor, axis: Axis) -> Tensor {
    let (outer, n, inner) = axis_geometry(p, axis);
    let src = p.data();
    let mut out = vec![0.0; src.len()];
    for o in 0..outer {
        for a in 0..n {
            let base = (o * n + a) * inner;
            for r in 0..inner {
                let mut v = 0.0;
                if a >= 1 {
                    v += src[base - inner + r];
                }
                if a + 1 < n {
                    v -= src[base + r];
                }
                out[base + r] = v;
            }
        }
    }
    Tensor::from_parts(p.shape().to_vec(), out)
}

/// Thin SVD of the matrix an SVT node operated on, kept for the backward pass.
///
/// The factorized matrix always has `rows >= cols`; when the caller's matrix
/// was wide it is transposed first and `transposed` is set.
#[derive(Clone, Debug)]
pub struct SvdFactors {
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
    pub u: DMatrix<f64>,
    pub sigma: Vec<f64>,
    pub v: DMatrix<f64>,
}

fn factorize(data: &[f64], rows: usize, cols: usize) -> SvdFactors {
    let transposed = rows < cols;
    let a = if transposed {
        DMatrix::from_row_slice(rows, cols, data).transpose()
    } else {
        DMatrix::from_row_slice(rows, cols, data)
    };
    let (m, n) = a.shape();
    // the iterative SVD never converges on NaN or infinite entries
    if !data.iter().all(|v| v.is_finite()) {
        return SvdFactors {
            rows: m,
            cols: n,
            transposed,
            u: DMatrix::from_element(m, n, f64::NAN),
            sigma: vec![f64::NAN; n],
            v: DMatrix::from_element(n, n, f64::NAN),
        };
    }
    let svd = a.svd(true, true);
    let u = svd.u.expect("svd computed with u");
    let v = svd.v_t.expect("svd computed with v_t").transpose();
    SvdFactors {
        rows: m,
        cols: n,
        transposed,
        u,
        sigma: svd.singular_values.iter().copied().collect(),
        v,
    }
}

pub fn singular_values(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    if !data.iter().all(|v| v.is_finite()) {
        return vec![f64::NAN; rows.min(cols)];
    }
    let a = DMatrix::from_row_slice(rows, cols, data);
    a.singular_values().iter().copied().collect()
}

fn rebuild(f: &SvdFactors, spectrum: &[f64]) -> Vec<f64> {
    let (m, n) = (f.rows, f.cols);
    let mut scaled = f.u.clone();
    for (j, &s) in spectrum.iter().enumerate() {
        scaled.column_mut(j).scale_mut(s);
    }
    let out = scaled * f.v.transpose();
    row_major(&out, f.transposed, m, n)
}

fn row_major(mat: &DMatrix<f64>, transposed: bool, m: usize, n: usize) -> Vec<f64> {
    // `mat` is m x n; the caller's matrix is its transpose when `transposed`.
    if transposed {
        let mut out = Vec::with_capacity(m * n);
        for j in 0..n {
            for i in 0..m {
                out.push(mat[(i, j)]);
            }
        }
        out
    } else {
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                out.push(mat[(i, j)]);
            }
        }
        out
    }
}

/// Singular value thresholding `U max(S - tau, 0) V^T` of a row-major
/// `rows x cols` matrix.
pub fn svt_forward(data: &[f64], rows: usize, cols: usize, tau: f64) -> (Vec<f64>, SvdFactors) {
    let factors = factorize(data, rows, cols);
    let shrunk: Vec<f64> = factors.sigma.iter().map(|&s| (s - tau).max(0.0)).collect();
    (rebuild(&factors, &shrunk), factors)
}

/// Reconstruct `U g(S) V^T` for an arbitrary spectral map.
pub fn spectral_map(data: &[f64], rows: usize, cols: usize, g: impl Fn(f64) -> f64) -> Vec<f64> {
    let factors = factorize(data, rows, cols);
    let mapped: Vec<f64> = factors.sigma.iter().map(|&s| g(s)).collect();
    rebuild(&factors, &mapped)
}

/// Vector-Jacobian product of [`svt_forward`].
///
/// Uses the SVD differential with the cross terms regularized as
/// `d / (d^2 + eps_svd)`, `d = s_j^2 - s_i^2`, so coincident singular values
/// do not blow up.
pub fn svt_backward(f: &SvdFactors, tau: f64, cotangent: &[f64], eps_svd: f64) -> Vec<f64> {
    let (m, n) = (f.rows, f.cols);
    let g = if f.transposed {
        DMatrix::from_row_slice(n, m, cotangent).transpose()
    } else {
        DMatrix::from_row_slice(m, n, cotangent)
    };
    let sigma = &f.sigma;
    let shrunk: Vec<f64> = sigma.iter().map(|&s| (s - tau).max(0.0)).collect();

    let gv = &g * &f.v;
    let q = f.u.transpose() * &gv;

    let mut core = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                let active = if sigma[i] > tau { 1.0 } else { 0.0 };
                core[(i, i)] = q[(i, i)] * active;
            } else {
                let d = sigma[j] * sigma[j] - sigma[i] * sigma[i];
                let e = d / (d * d + eps_svd);
                let a = q[(i, j)] * (shrunk[j] * sigma[j] - shrunk[i] * sigma[i]);
                let b = q[(j, i)] * (shrunk[i] * sigma[j] - shrunk[j] * sigma[i]);
                core[(i, j)] = e * (a - b);
            }
        }
    }

    let mut perp = &gv - &f.u * &q;
    for j in 0..n {
        let ratio = if shrunk[j] == 0.0 { 0.0 } else { shrunk[j] / sigma[j] };
        perp.column_mut(j).scale_mut(ratio);
    }
    let adj = (&f.u * core + perp) * f.v.transpose();
    row_major(&adj, f.transposed, m, n)
}

/// Geometry of a zero-padded, stride-1, "same"-size 3-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: [usize; 3],
    pub volume: [usize; 3],
}

impl ConvGeometry {
    pub fn infer(input: &Tensor, kernel: &Tensor) -> Self {
        let ks = kernel.shape();
        assert_eq!(ks.len(), 5, "conv kernel must be [c_out, c_in, kh, kw, kb]");
        let (c, h, w, b) = input.volume_dims();
        assert_eq!(c, ks[1], "conv input channels {c} != kernel c_in {}", ks[1]);
        Self {
            c_in: ks[1],
            c_out: ks[0],
            kernel: [ks[2], ks[3], ks[4]],
            volume: [h, w, b],
        }
    }

    fn offsets(&self, d: [usize; 3]) -> [isize; 3] {
        let mut off = [0isize; 3];
        for a in 0..3 {
            off[a] = d[a] as isize - (self.kernel[a] / 2) as isize;
        }
        off
    }
}

// Output index range [lo, hi) for which `i + off` stays inside `0..n`.
fn valid_range(n: usize, off: isize) -> (usize, usize) {
    let lo = (-off).max(0) as usize;
    let hi = (n as isize - off).clamp(0, n as isize) as usize;
    (lo.min(hi), hi)
}

/// Cross-correlation `out[co,i,j,k] = sum w[co,ci,di,dj,dk] x[ci,i+di-ph,j+dj-pw,k+dk-pb]`.
pub fn conv3d_forward(input: &Tensor, kernel: &Tensor) -> Tensor {
    let g = ConvGeometry::infer(input, kernel);
    let [h, w, b] = g.volume;
    let [kh, kw, kb] = g.kernel;
    let vol = h * w * b;
    let x = input.data();
    let k = kernel.data();
    let mut out = vec![0.0; g.c_out * vol];
    for co in 0..g.c_out {
        let out_c = &mut out[co * vol..(co + 1) * vol];
        for ci in 0..g.c_in {
            let x_c = &x[ci * vol..(ci + 1) * vol];
            for di in 0..kh {
                for dj in 0..kw {
                    for dk in 0..kb {
                        let wv = k[(((co * g.c_in + ci) * kh + di) * kw + dj) * kb + dk];
                        if wv == 0.0 {
                            continue;
                        }
                        let [oi, oj, ok] = g.offsets([di, dj, dk]);
                        let (i0, i1) = valid_range(h, oi);
                        let (j0, j1) = valid_range(w, oj);
                        let (k0, k1) = valid_range(b, ok);
                        for i in i0..i1 {
                            let si = (i as isize + oi) as usize;
                            for j in j0..j1 {
                                let sj = (j as isize + oj) as usize;
                                let dst = (i * w + j) * b;
                                let src = ((si * w + sj) * b) as isize + ok;
                                for kk in k0..k1 {
                                    out_c[dst + kk] += wv * x_c[(src + kk as isize) as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_parts(vec![g.c_out, h, w, b], out)
}

/// Adjoints of [`conv3d_forward`] with respect to the input and the kernel.
pub fn conv3d_backward(input: &Tensor, kernel: &Tensor, cotangent: &Tensor) -> (Tensor, Tensor) {
    let g = ConvGeometry::infer(input, kernel);
    let [h, w, b] = g.volume;
    let [kh, kw, kb] = g.kernel;
    let vol = h * w * b;
    let x = input.data();
    let k = kernel.data();
    let gy = cotangent.data();
    let mut gx = vec![0.0; g.c_in * vol];
    let mut gk = vec![0.0; k.len()];
    for co in 0..g.c_out {
        let gy_c = &gy[co * vol..(co + 1) * vol];
        for ci in 0..g.c_in {
            let x_c = &x[ci * vol..(ci + 1) * vol];
            let gx_c = &mut gx[ci * vol..(ci + 1) * vol];
            for di in 0..kh {
                for dj in 0..kw {
                    for dk in 0..kb {
                        let widx = (((co * g.c_in + ci) * kh + di) * kw + dj) * kb + dk;
                        let wv = k[widx];
                        let [oi, oj, ok] = g.offsets([di, dj, dk]);
                        let (i0, i1) = valid_range(h, oi);
                        let (j0, j1) = valid_range(w, oj);
                        let (k0, k1) = valid_range(b, ok);
                        let mut acc = 0.0;
                        for i in i0..i1 {
                            let si = (i as isize + oi) as usize;
                            for j in j0..j1 {
                                let sj = (j as isize + oj) as usize;
                                let dst = (i * w + j) * b;
                                let src = ((si * w + sj) * b) as isize + ok;
                                for kk in k0..k1 {
                                    let s = (src + kk as isize) as usize;
                                    let go = gy_c[dst + kk];
                                    acc += go * x_c[s];
                                    gx_c[s] += wv * go;
                                }
                            }
                        }
                        gk[widx] += acc;
                    }
                }
            }
        }
    }
    (
        Tensor::from_parts(input.shape().to_vec(), gx),
        Tensor::from_parts(kernel.shape().to_vec(), gk),
    )
}

/// Adds `bias[c]` to every element of channel `c`.
pub fn channel_bias_forward(input: &Tensor, bias: &Tensor) -> Tensor {
    let (c, h, w, b) = input.volume_dims();
    assert_eq!(bias.len(), c, "bias length {} != channels {c}", bias.len());
    let vol = h * w * b;
    let mut out = input.data().to_vec();
    for (ch, &bv) in bias.data().iter().enumerate() {
        for v in &mut out[ch * vol..(ch + 1) * vol] {
            *v += bv;
        }
    }
    Tensor::from_parts(input.shape().to_vec(), out)
}

pub fn channel_bias_backward(cotangent: &Tensor, channels: usize) -> Tensor {
    let vol = cotangent.len() / channels;
    let sums = (0..channels)
        .map(|c| cotangent.data()[c * vol..(c + 1) * vol].iter().sum())
        .collect();
    Tensor::from_parts(vec![channels], sums)
}

/// Softmax over every element, multiplied by the element count so the
/// output averages to one.
pub fn softmax_scaled_forward(logits: &Tensor) -> Tensor {
    let m = logits.len() as f64;
    let max = logits.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.data().iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let data = exps.iter().map(|&e| m * e / total).collect();
    Tensor::from_parts(logits.shape().to_vec(), data)
}

pub fn softmax_scaled_backward(output: &Tensor, cotangent: &Tensor) -> Tensor {
    let m = output.len() as f64;
    let inner: f64 = output
        .data()
        .iter()
        .zip(cotangent.data())
        .map(|(w, g)| w * g)
        .sum::<f64>()
        / m;
    output.zip_map(cotangent, |w, g| w * (g - inner))
}

pub fn mse(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape(), "mse shape mismatch");
    let n = a.len() as f64;
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n
}
