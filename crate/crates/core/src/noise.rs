//! Mixed-noise synthesis for the five corruption cases.
//!
//! Gaussian levels are given in 8-bit units and applied as `sigma / 255`.
//! Impulse noise is salt-and-pepper at `{0, 1}`, stripes add a constant
//! offset down each chosen column, deadlines zero whole columns. Nothing is
//! clamped afterwards.
//!
//! Every mechanism draws from its own ChaCha stream of the cube seed, so
//! a [`NoiseLog`] plus the clean cube reproduce the noisy cube exactly.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cube::HsiCube;
use crate::error::{Error, Result};
use crate::synthetic::gaussian_blur_2d;

const STREAM_GAUSSIAN: u64 = 1;
const STREAM_IMPULSE: u64 = 2;
const STREAM_STRIPE: u64 = 3;
const STREAM_DEADLINE: u64 = 4;
const STREAM_LEVELS: u64 = 5;

pub const STRIPE_AMPLITUDE: f64 = 0.25;
const FIELD_BLUR_SIGMA: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseCase {
    /// Gaussian + impulse.
    Case1,
    /// Gaussian + stripes.
    Case2,
    /// Gaussian + deadlines.
    Case3,
    /// Spatially and spectrally varying Gaussian.
    Case4,
    /// All of the above.
    Case5,
}

impl NoiseCase {
    pub const ALL: [NoiseCase; 5] = [
        NoiseCase::Case1,
        NoiseCase::Case2,
        NoiseCase::Case3,
        NoiseCase::Case4,
        NoiseCase::Case5,
    ];

    fn varying_gaussian(self) -> bool {
        matches!(self, NoiseCase::Case4 | NoiseCase::Case5)
    }

    fn impulse(self) -> bool {
        matches!(self, NoiseCase::Case1 | NoiseCase::Case5)
    }

    fn stripe(self) -> bool {
        matches!(self, NoiseCase::Case2 | NoiseCase::Case5)
    }

    fn deadline(self) -> bool {
        matches!(self, NoiseCase::Case3 | NoiseCase::Case5)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub case: NoiseCase,
    /// Gaussian level range in 8-bit units.
    pub sigma_range: (f64, f64),
    pub impulse_ratio_range: (f64, f64),
    pub stripe_ratio_range: (f64, f64),
    pub deadline_ratio_range: (f64, f64),
    /// Bands hit by each sparse corruption; `None` scales 10 of 31 bands to
    /// the cube.
    pub affected_band_count: Option<usize>,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            case: NoiseCase::Case1,
            sigma_range: (10.0, 70.0),
            impulse_ratio_range: (0.1, 0.5),
            stripe_ratio_range: (0.05, 0.2),
            deadline_ratio_range: (0.05, 0.2),
            affected_band_count: None,
            seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn new(case: NoiseCase, seed: u64) -> Self {
        Self {
            case,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.sigma_range;
        if !(0.0 <= lo && lo <= hi && hi.is_finite()) {
            return Err(Error::arg(format!("invalid sigma range ({lo}, {hi})")));
        }
        for (name, (a, b)) in [
            ("impulse", self.impulse_ratio_range),
            ("stripe", self.stripe_ratio_range),
            ("deadline", self.deadline_ratio_range),
        ] {
            if !(0.0 <= a && a <= b && b <= 1.0) {
                return Err(Error::arg(format!("invalid {name} ratio range ({a}, {b})")));
            }
        }
        Ok(())
    }

    pub fn band_count(&self, bands: usize) -> Result<usize> {
        let n = self
            .affected_band_count
            .unwrap_or_else(|| ((bands as f64 * 10.0 / 31.0).round() as usize).max(1));
        if n > bands {
            return Err(Error::arg(format!(
                "affected_band_count {n} exceeds the cube's {bands} bands"
            )));
        }
        Ok(n)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImpulseRecord {
    pub bands: Vec<usize>,
    pub ratio: f64,
    /// Flat pixel indices `i * width + j` per affected band.
    pub pixels: Vec<Vec<usize>>,
    pub values: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StripeRecord {
    pub bands: Vec<usize>,
    pub ratio: f64,
    pub cols: Vec<Vec<usize>>,
    pub offsets: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeadlineRecord {
    pub bands: Vec<usize>,
    pub ratio: f64,
    pub cols: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseLog {
    pub case: NoiseCase,
    /// Per-band Gaussian level in 8-bit units; the base level before spatial
    /// modulation for the varying cases.
    pub per_band_sigma: Vec<f64>,
    /// Bounds the spatially modulated levels were clamped to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_clamp: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub impulse: Option<ImpulseRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stripe: Option<StripeRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deadline: Option<DeadlineRecord>,
    pub seed: u64,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

fn pick(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    let mut v = sample(rng, n, k).into_vec();
    v.sort_unstable();
    v
}

/// Per-element Gaussian levels in 8-bit units.
#[derive(Clone, Debug, PartialEq)]
pub enum SigmaSpec {
    PerBand(Vec<f64>),
    /// Same layout as the cube.
    PerElement(Vec<f64>),
}

/// Adds `sigma(i, j, k) / 255 * g` with `g` i.i.d. standard normal, drawn in
/// layout order from `seed`.
pub fn add_gaussian(cube: &HsiCube, sigma: &SigmaSpec, seed: u64) -> Result<HsiCube> {
    let bands = cube.bands();
    let levels: &[f64] = match sigma {
        SigmaSpec::PerBand(s) if s.len() == bands => s,
        SigmaSpec::PerElement(s) if s.len() == cube.len() => s,
        _ => return Err(Error::arg("sigma length matches neither bands nor elements")),
    };
    if levels.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
        return Err(Error::arg("Gaussian levels must be non-negative"));
    }
    let per_band = matches!(sigma, SigmaSpec::PerBand(_));
    let mut rng = stream(seed, STREAM_GAUSSIAN);
    let data = cube
        .data()
        .iter()
        .enumerate()
        .map(|(e, &v)| {
            let s = if per_band { levels[e % bands] } else { levels[e] };
            let g: f64 = StandardNormal.sample(&mut rng);
            v + s / 255.0 * g
        })
        .collect();
    HsiCube::new(cube.height(), cube.width(), bands, data)
}

fn check_bands(cube: &HsiCube, bands: &[usize]) -> Result<()> {
    if let Some(&b) = bands.iter().find(|&&b| b >= cube.bands()) {
        return Err(Error::arg(format!("band {b} out of range")));
    }
    Ok(())
}

fn check_ratio(ratio: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::arg(format!("ratio {ratio} outside [0, 1]")));
    }
    Ok(())
}

/// Salt-and-pepper on `round(ratio * h * w)` pixels of each listed band.
pub fn add_impulse(cube: &HsiCube, ratio: f64, bands: &[usize], seed: u64) -> Result<(HsiCube, ImpulseRecord)> {
    check_ratio(ratio)?;
    check_bands(cube, bands)?;
    let mut rng = stream(seed, STREAM_IMPULSE);
    impulse_with(cube, ratio, bands.to_vec(), &mut rng)
}

fn impulse_with(
    cube: &HsiCube,
    ratio: f64,
    bands: Vec<usize>,
    rng: &mut ChaCha8Rng,
) -> Result<(HsiCube, ImpulseRecord)> {
    let area = cube.height() * cube.width();
    let count = (ratio * area as f64).round() as usize;
    let mut pixels = Vec::with_capacity(bands.len());
    let mut values = Vec::with_capacity(bands.len());
    for _ in &bands {
        pixels.push(pick(rng, area, count));
        values.push(
            (0..count)
                .map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 })
                .collect(),
        );
    }
    let rec = ImpulseRecord {
        bands,
        ratio,
        pixels,
        values,
    };
    Ok((apply_impulse(cube, &rec)?, rec))
}

fn apply_impulse(cube: &HsiCube, rec: &ImpulseRecord) -> Result<HsiCube> {
    let mut out = cube.clone();
    let b = cube.bands();
    for ((&band, px), vals) in rec.bands.iter().zip(&rec.pixels).zip(&rec.values) {
        for (&p, &v) in px.iter().zip(vals) {
            out.data_mut()[p * b + band] = v;
        }
    }
    Ok(out)
}

/// Constant offsets in `[-0.25, 0.25]` down `round(ratio * width)` columns of
/// each listed band.
pub fn add_stripe(cube: &HsiCube, ratio: f64, bands: &[usize], seed: u64) -> Result<(HsiCube, StripeRecord)> {
    check_ratio(ratio)?;
    check_bands(cube, bands)?;
    let mut rng = stream(seed, STREAM_STRIPE);
    stripe_with(cube, ratio, bands.to_vec(), &mut rng)
}

fn stripe_with(
    cube: &HsiCube,
    ratio: f64,
    bands: Vec<usize>,
    rng: &mut ChaCha8Rng,
) -> Result<(HsiCube, StripeRecord)> {
    let width = cube.width();
    let count = (ratio * width as f64).round() as usize;
    let mut cols = Vec::with_capacity(bands.len());
    let mut offsets = Vec::with_capacity(bands.len());
    for _ in &bands {
        cols.push(pick(rng, width, count));
        offsets.push(
            (0..count)
                .map(|_| rng.random_range(-STRIPE_AMPLITUDE..=STRIPE_AMPLITUDE))
                .collect(),
        );
    }
    let rec = StripeRecord {
        bands,
        ratio,
        cols,
        offsets,
    };
    Ok((apply_stripe(cube, &rec)?, rec))
}

fn apply_stripe(cube: &HsiCube, rec: &StripeRecord) -> Result<HsiCube> {
    let mut out = cube.clone();
    let (h, w, b) = cube.dims();
    for ((&band, cols), offs) in rec.bands.iter().zip(&rec.cols).zip(&rec.offsets) {
        for (&j, &o) in cols.iter().zip(offs) {
            for i in 0..h {
                out.data_mut()[(i * w + j) * b + band] += o;
            }
        }
    }
    Ok(out)
}

/// Zeroes `round(ratio * width)` columns of each listed band.
pub fn add_deadline(cube: &HsiCube, ratio: f64, bands: &[usize], seed: u64) -> Result<(HsiCube, DeadlineRecord)> {
    check_ratio(ratio)?;
    check_bands(cube, bands)?;
    let mut rng = stream(seed, STREAM_DEADLINE);
    deadline_with(cube, ratio, bands.to_vec(), &mut rng)
}

fn deadline_with(
    cube: &HsiCube,
    ratio: f64,
    bands: Vec<usize>,
    rng: &mut ChaCha8Rng,
) -> Result<(HsiCube, DeadlineRecord)> {
    let width = cube.width();
    let count = (ratio * width as f64).round() as usize;
    let cols = bands.iter().map(|_| pick(rng, width, count)).collect();
    let rec = DeadlineRecord { bands, ratio, cols };
    Ok((apply_deadline(cube, &rec)?, rec))
}

fn apply_deadline(cube: &HsiCube, rec: &DeadlineRecord) -> Result<HsiCube> {
    let mut out = cube.clone();
    let (h, w, b) = cube.dims();
    for (&band, cols) in rec.bands.iter().zip(&rec.cols) {
        for &j in cols {
            for i in 0..h {
                out.data_mut()[(i * w + j) * b + band] = 0.0;
            }
        }
    }
    Ok(out)
}

fn truncated_normal(rng: &mut ChaCha8Rng, mean: f64, std: f64, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        return lo;
    }
    let normal = Normal::new(mean, std).expect("finite std");
    loop {
        let v: f64 = normal.sample(rng);
        if (lo..=hi).contains(&v) {
            return v;
        }
    }
}

/// Spatially varying levels: base level per band times a smooth field in
/// `[0.5, 1.5]`, clamped back into the level range.
fn varying_levels(
    dims: (usize, usize, usize),
    base: &[f64],
    (lo, hi): (f64, f64),
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let (h, w, bands) = dims;
    let mut levels = vec![0.0; h * w * bands];
    for (k, &s) in base.iter().enumerate() {
        let raw: Vec<f64> = (0..h * w).map(|_| rng.random::<f64>()).collect();
        let field = gaussian_blur_2d(&raw, h, w, FIELD_BLUR_SIGMA);
        let (fmin, fmax) = field
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        for (p, &f) in field.iter().enumerate() {
            let scale = if fmax > fmin {
                0.5 + (f - fmin) / (fmax - fmin)
            } else {
                1.0
            };
            levels[p * bands + k] = (s * scale).clamp(lo, hi);
        }
    }
    levels
}

fn gaussian_levels(spec: &NoiseSpec, dims: (usize, usize, usize), seed: u64) -> (Vec<f64>, SigmaSpec) {
    let mut rng = stream(seed, STREAM_LEVELS);
    let (lo, hi) = spec.sigma_range;
    let bands = dims.2;
    if spec.case.varying_gaussian() {
        let mean = 0.5 * (lo + hi);
        let std = 0.25 * (hi - lo);
        let base: Vec<f64> = (0..bands)
            .map(|_| truncated_normal(&mut rng, mean, std, lo, hi))
            .collect();
        let levels = varying_levels(dims, &base, (lo, hi), &mut rng);
        (base, SigmaSpec::PerElement(levels))
    } else {
        let base: Vec<f64> = (0..bands).map(|_| draw(&mut rng, (lo, hi))).collect();
        (base.clone(), SigmaSpec::PerBand(base))
    }
}

/// Corrupts `clean` according to `spec`; Gaussian first, then impulse,
/// stripes and deadlines.
pub fn synth_noise(clean: &HsiCube, spec: &NoiseSpec) -> Result<(HsiCube, NoiseLog)> {
    spec.validate()?;
    if clean.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::arg("clean cube must lie in [0, 1]"));
    }
    let dims = clean.dims();
    let n_bands = spec.band_count(dims.2)?;
    let seed = spec.seed;
    let (per_band_sigma, levels) = gaussian_levels(spec, dims, seed);
    let mut noisy = add_gaussian(clean, &levels, seed)?;
    let mut log = NoiseLog {
        case: spec.case,
        per_band_sigma,
        sigma_clamp: spec.case.varying_gaussian().then_some(spec.sigma_range),
        impulse: None,
        stripe: None,
        deadline: None,
        seed,
    };
    if spec.case.impulse() {
        let mut rng = stream(seed, STREAM_IMPULSE);
        let ratio = draw(&mut rng, spec.impulse_ratio_range);
        let bands = pick(&mut rng, dims.2, n_bands);
        let (out, rec) = impulse_with(&noisy, ratio, bands, &mut rng)?;
        noisy = out;
        log.impulse = Some(rec);
    }
    if spec.case.stripe() {
        let mut rng = stream(seed, STREAM_STRIPE);
        let ratio = draw(&mut rng, spec.stripe_ratio_range);
        let bands = pick(&mut rng, dims.2, n_bands);
        let (out, rec) = stripe_with(&noisy, ratio, bands, &mut rng)?;
        noisy = out;
        log.stripe = Some(rec);
    }
    if spec.case.deadline() {
        let mut rng = stream(seed, STREAM_DEADLINE);
        let ratio = draw(&mut rng, spec.deadline_ratio_range);
        let bands = pick(&mut rng, dims.2, n_bands);
        let (out, rec) = deadline_with(&noisy, ratio, bands, &mut rng)?;
        noisy = out;
        log.deadline = Some(rec);
    }
    Ok((noisy, log))
}

/// Rebuilds the noisy cube from `clean` and a log produced by
/// [`synth_noise`].
pub fn replay(clean: &HsiCube, log: &NoiseLog) -> Result<HsiCube> {
    let dims = clean.dims();
    if log.per_band_sigma.len() != dims.2 {
        return Err(Error::arg("log does not match the cube's band count"));
    }
    let levels = match log.sigma_clamp {
        Some(bounds) => {
            let spec = NoiseSpec {
                case: log.case,
                sigma_range: bounds,
                seed: log.seed,
                ..NoiseSpec::default()
            };
            let (base, levels) = gaussian_levels(&spec, dims, log.seed);
            if base != log.per_band_sigma {
                return Err(Error::arg("logged base levels disagree with the seed"));
            }
            levels
        }
        None => SigmaSpec::PerBand(log.per_band_sigma.clone()),
    };
    let mut out = add_gaussian(clean, &levels, log.seed)?;
    if let Some(rec) = &log.impulse {
        check_bands(clean, &rec.bands)?;
        out = apply_impulse(&out, rec)?;
    }
    if let Some(rec) = &log.stripe {
        check_bands(clean, &rec.bands)?;
        out = apply_stripe(&out, rec)?;
    }
    if let Some(rec) = &log.deadline {
        check_bands(clean, &rec.bands)?;
        out = apply_deadline(&out, rec)?;
    }
    Ok(out)
}
