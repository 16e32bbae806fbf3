//! Quality measures between a reference and a test cube.
//!
//! PSNR and SSIM are computed per band and averaged; SAM averages per-pixel
//! spectral angles in degrees; ERGAS aggregates band-relative RMSEs.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::cube::HsiCube;
use crate::error::{Error, Result};

pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub psnr: f64,
    pub ssim: f64,
    pub sam: f64,
    pub ergas: f64,
}

fn band_mse(reference: &HsiCube, test: &HsiCube) -> Vec<f64> {
    let b = reference.bands();
    let mut acc = vec![0.0; b];
    for (e, (r, t)) in reference.data().iter().zip(test.data()).enumerate() {
        acc[e % b] += (r - t) * (r - t);
    }
    let area = (reference.height() * reference.width()) as f64;
    acc.iter().map(|s| s / area).collect()
}

pub fn psnr_per_band(reference: &HsiCube, test: &HsiCube, peak: f64) -> Result<Vec<f64>> {
    reference.require_same_shape(test, "test cube")?;
    Ok(band_mse(reference, test)
        .into_iter()
        .map(|mse| {
            if mse == 0.0 {
                PSNR_CAP
            } else {
                (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP)
            }
        })
        .collect())
}

/// Mean over bands of `10 log10(peak^2 / MSE_k)`, capped at 100 dB.
pub fn psnr(reference: &HsiCube, test: &HsiCube, peak: f64) -> Result<f64> {
    let v = psnr_per_band(reference, test, peak)?;
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as isize;
    let g: Vec<f64> = (-r..=r)
        .map(|d| (-((d * d) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let mut win: Vec<f64> = g.iter().flat_map(|a| g.iter().map(move |b| a * b)).collect();
    let total: f64 = win.iter().sum();
    win.iter_mut().for_each(|v| *v /= total);
    win
}

/// Mean SSIM over valid 11x11 Gaussian windows, averaged over bands.
pub fn ssim(reference: &HsiCube, test: &HsiCube) -> Result<f64> {
    reference.require_same_shape(test, "test cube")?;
    let (h, w, b) = reference.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::arg(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let c1 = 0.01f64.powi(2);
    let c2 = 0.03f64.powi(2);
    let win = gaussian_window();
    let mut total = 0.0;
    for k in 0..b {
        let mut band_sum = 0.0;
        let mut count = 0usize;
        for i in 0..=h - SSIM_WINDOW {
            for j in 0..=w - SSIM_WINDOW {
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for di in 0..SSIM_WINDOW {
                    for dj in 0..SSIM_WINDOW {
                        let g = win[di * SSIM_WINDOW + dj];
                        let x = reference.get(i + di, j + dj, k);
                        let y = test.get(i + di, j + dj, k);
                        mx += g * x;
                        my += g * y;
                        sxx += g * x * x;
                        syy += g * y * y;
                        sxy += g * x * y;
                    }
                }
                let vx = sxx - mx * mx;
                let vy = syy - my * my;
                let cxy = sxy - mx * my;
                band_sum += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        total += band_sum / count as f64;
    }
    Ok(total / b as f64)
}

/// Mean spectral angle in degrees and the number of pixels skipped because
/// either spectrum has zero norm.
pub fn sam_detailed(reference: &HsiCube, test: &HsiCube) -> Result<(f64, usize)> {
    reference.require_same_shape(test, "test cube")?;
    let (h, w, _) = reference.dims();
    let mut sum = 0.0;
    let mut used = 0usize;
    for i in 0..h {
        for j in 0..w {
            let r = reference.spectrum(i, j);
            let t = test.spectrum(i, j);
            let nr = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nt = t.iter().map(|v| v * v).sum::<f64>().sqrt();
            if nr == 0.0 || nt == 0.0 {
                continue;
            }
            let dot: f64 = r.iter().zip(t).map(|(a, b)| a * b).sum();
            sum += (dot / (nr * nt)).clamp(-1.0, 1.0).acos().to_degrees();
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::Degenerate("every pixel spectrum has zero norm".into()));
    }
    Ok((sum / used as f64, h * w - used))
}

pub fn sam(reference: &HsiCube, test: &HsiCube) -> Result<f64> {
    sam_detailed(reference, test).map(|(v, _)| v)
}

/// `100 * ratio * sqrt(mean_k (RMSE_k / mean_k)^2)`.
pub fn ergas(reference: &HsiCube, test: &HsiCube, ratio: f64) -> Result<f64> {
    reference.require_same_shape(test, "test cube")?;
    let b = reference.bands();
    let area = (reference.height() * reference.width()) as f64;
    let mut means = vec![0.0; b];
    for (e, v) in reference.data().iter().enumerate() {
        means[e % b] += v / area;
    }
    if means.contains(&0.0) {
        return Err(Error::Degenerate("reference band with zero mean".into()));
    }
    let acc: f64 = band_mse(reference, test)
        .iter()
        .zip(&means)
        .map(|(mse, mu)| mse / (mu * mu))
        .sum();
    Ok(100.0 * ratio * (acc / b as f64).sqrt())
}

pub fn evaluate(reference: &HsiCube, test: &HsiCube) -> Result<MetricsReport> {
    Ok(MetricsReport {
        psnr: psnr(reference, test, 1.0)?,
        ssim: ssim(reference, test)?,
        sam: sam(reference, test)?,
        ergas: ergas(reference, test, 1.0)?,
    })
}

/// One CSV row per named report.
pub fn write_csv<W: Write>(out: W, rows: &[(String, MetricsReport)]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["id", "psnr", "ssim", "sam", "ergas"])?;
    for (id, m) in rows {
        wtr.write_record([
            id.clone(),
            m.psnr.to_string(),
            m.ssim.to_string(),
            m.sam.to_string(),
            m.ergas.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
