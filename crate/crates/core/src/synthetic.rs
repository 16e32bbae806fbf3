//! Synthetic clean scenes for experiments without a real corpus.
//!
//! A scene mixes a few smooth spectral signatures with abundance maps that
//! are sharpened softmaxes of blurred random fields, giving piecewise-smooth
//! regions with a low-rank spectral structure, then rescales to `[0, 1]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cube::{normalize, HsiCube};
use crate::error::{Error, Result};

/// Separable Gaussian blur of an `h x w` field with zero-flux (clamped)
/// borders.
pub fn gaussian_blur_2d(field: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    assert_eq!(field.len(), h * w);
    if sigma <= 0.0 {
        return field.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let pass = |src: &[f64], along_rows: bool| -> Vec<f64> {
        let mut out = vec![0.0; h * w];
        for i in 0..h {
            for j in 0..w {
                let (mut acc, mut norm) = (0.0, 0.0);
                for (t, &g) in taps.iter().enumerate() {
                    let d = t as isize - radius;
                    let (si, sj) = if along_rows {
                        (i as isize, j as isize + d)
                    } else {
                        (i as isize + d, j as isize)
                    };
                    if si < 0 || sj < 0 || si >= h as isize || sj >= w as isize {
                        continue;
                    }
                    acc += g * src[si as usize * w + sj as usize];
                    norm += g;
                }
                out[i * w + j] = acc / norm;
            }
        }
        out
    };
    let tmp = pass(field, true);
    pass(&tmp, false)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneParams {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    /// Number of spectral signatures mixed.
    pub materials: usize,
    /// Blur of the abundance fields in pixels; larger means bigger regions.
    pub smoothness: f64,
    /// Softmax sharpness of the abundances; larger means crisper edges.
    pub sharpness: f64,
}

impl SceneParams {
    pub fn new(height: usize, width: usize, bands: usize) -> Self {
        Self {
            height,
            width,
            bands,
            materials: 3,
            smoothness: 2.5,
            sharpness: 12.0,
        }
    }
}

fn signature(rng: &mut ChaCha8Rng, bands: usize) -> Vec<f64> {
    let bumps = 2;
    let params: Vec<(f64, f64, f64)> = (0..bumps)
        .map(|_| {
            (
                rng.random_range(0.0..1.0),
                rng.random_range(0.15..0.6),
                rng.random_range(0.3..1.0),
            )
        })
        .collect();
    let base = rng.random_range(0.05..0.3);
    (0..bands)
        .map(|k| {
            let t = if bands > 1 { k as f64 / (bands - 1) as f64 } else { 0.5 };
            base + params
                .iter()
                .map(|&(c, s, a)| a * (-(t - c) * (t - c) / (2.0 * s * s)).exp())
                .sum::<f64>()
        })
        .collect()
}

/// Deterministic clean cube in `[0, 1]`.
pub fn synthetic_scene(p: &SceneParams, seed: u64) -> Result<HsiCube> {
    if p.materials == 0 {
        return Err(Error::arg("a scene needs at least one material"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w, b) = (p.height, p.width, p.bands);
    let sigs: Vec<Vec<f64>> = (0..p.materials).map(|_| signature(&mut rng, b)).collect();
    let fields: Vec<Vec<f64>> = (0..p.materials)
        .map(|_| {
            let raw: Vec<f64> = (0..h * w).map(|_| rng.random::<f64>()).collect();
            gaussian_blur_2d(&raw, h, w, p.smoothness)
        })
        .collect();
    let shade: Vec<f64> = {
        let raw: Vec<f64> = (0..h * w).map(|_| rng.random::<f64>()).collect();
        gaussian_blur_2d(&raw, h, w, 2.0 * p.smoothness)
    };
    let mut data = vec![0.0; h * w * b];
    for px in 0..h * w {
        let logits: Vec<f64> = fields.iter().map(|f| p.sharpness * f[px]).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = e.iter().sum();
        let gain = 0.6 + 0.8 * shade[px];
        for k in 0..b {
            data[px * b + k] = gain * e.iter().zip(&sigs).map(|(a, s)| a * s[k]).sum::<f64>() / total;
        }
    }
    normalize(&HsiCube::new(h, w, b, data)?)
}
