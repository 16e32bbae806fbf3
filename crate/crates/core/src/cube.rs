//! Hyperspectral cube model, patching, augmentation and the `HWC1` file format.
//!
//! Cubes are stored band-fastest: element `(i, j, k)` lives at
//! `(i * width + j) * bands + k`, so each pixel's spectrum is contiguous.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const CUBE_MAGIC: &[u8; 4] = b"HWC1";
pub const CUBE_HEADER_LEN: usize = 16;

/// Default magnitude bound for noisy cubes.
pub const DEFAULT_BOUND: f64 = 4.0;

#[derive(Clone, Debug, PartialEq)]
pub struct HsiCube {
    height: usize,
    width: usize,
    bands: usize,
    data: Vec<f64>,
}

impl HsiCube {
    pub fn new(height: usize, width: usize, bands: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(Error::arg(format!(
                "cube dimensions must be positive, got {height}x{width}x{bands}"
            )));
        }
        let n = height
            .checked_mul(width)
            .and_then(|v| v.checked_mul(bands))
            .ok_or_else(|| Error::arg("cube dimension product overflows"))?;
        if n != data.len() {
            return Err(Error::arg(format!(
                "{height}x{width}x{bands} cube needs {n} values, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite value {} at flat index {pos}",
                data[pos]
            )));
        }
        Ok(Self {
            height,
            width,
            bands,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, bands: usize, value: f64) -> Result<Self> {
        Self::new(height, width, bands, vec![value; height * width * bands])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        bands: usize,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * bands);
        for i in 0..height {
            for j in 0..width {
                for k in 0..bands {
                    data.push(f(i, j, k));
                }
            }
        }
        Self::new(height, width, bands, data)
    }

    /// Rebuilds a cube from a `[.., h, w, b]` tensor with one channel.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let s = t.shape();
        if s.len() < 3 || s[..s.len() - 3].iter().product::<usize>() != 1 {
            return Err(Error::arg(format!("tensor shape {s:?} is not a single cube")));
        }
        let n = s.len();
        Self::new(s[n - 3], s[n - 2], s[n - 1], t.data().to_vec())
    }

    /// Single-channel `[1, h, w, b]` tensor view of this cube.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_parts(
            vec![1, self.height, self.width, self.bands],
            self.data.clone(),
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.bands)
    }

    /// Total element count `M = h * w * b`.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.width + j) * self.bands + k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.index(i, j, k)]
    }

    pub fn spectrum(&self, i: usize, j: usize) -> &[f64] {
        let start = self.index(i, j, 0);
        &self.data[start..start + self.bands]
    }

    pub fn same_shape(&self, other: &HsiCube) -> bool {
        self.dims() == other.dims()
    }

    pub fn require_same_shape(&self, other: &HsiCube, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::arg(format!(
                "{what}: shape {:?} vs {:?}",
                self.dims(),
                other.dims()
            )))
        }
    }

    /// Applies `f` elementwise, re-validating finiteness.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(
            self.height,
            self.width,
            self.bands,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn check_bounded(&self, bound: f64) -> Result<()> {
        let m = self.max_abs();
        if m > bound {
            return Err(Error::Validation(format!(
                "cube magnitude {m} exceeds bound {bound}"
            )));
        }
        Ok(())
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Noisy/clean training pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchPair {
    pub noisy: HsiCube,
    pub clean: HsiCube,
    pub id: String,
}

impl PatchPair {
    pub fn new(noisy: HsiCube, clean: HsiCube, id: impl Into<String>) -> Result<Self> {
        noisy.require_same_shape(&clean, "patch pair")?;
        Ok(Self {
            noisy,
            clean,
            id: id.into(),
        })
    }
}

pub fn save_cube(cube: &HsiCube, path: impl AsRef<Path>) -> Result<()> {
    if let Some(v) = cube.data.iter().find(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("refusing to write non-finite value {v}")));
    }
    let bytes = encode_cube(cube)?;
    let mut f = fs::File::create(path.as_ref())?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn encode_cube(cube: &HsiCube) -> Result<Vec<u8>> {
    let dim = |v: usize, name: &str| {
        u32::try_from(v).map_err(|_| Error::arg(format!("{name} {v} does not fit in u32")))
    };
    let mut out = Vec::with_capacity(CUBE_HEADER_LEN + 4 * cube.len());
    out.extend_from_slice(CUBE_MAGIC);
    out.extend_from_slice(&dim(cube.height, "height")?.to_le_bytes());
    out.extend_from_slice(&dim(cube.width, "width")?.to_le_bytes());
    out.extend_from_slice(&dim(cube.bands, "bands")?.to_le_bytes());
    for &v in &cube.data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn load_cube(path: impl AsRef<Path>) -> Result<HsiCube> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    decode_cube(&fs::read(path)?)
}

pub fn decode_cube(bytes: &[u8]) -> Result<HsiCube> {
    if bytes.len() < 4 || &bytes[..4] != CUBE_MAGIC {
        return Err(Error::Format("missing HWC1 magic".into()));
    }
    if bytes.len() < CUBE_HEADER_LEN {
        return Err(Error::Corrupt("truncated header".into()));
    }
    let read_u32 = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let (h, w, b) = (read_u32(4), read_u32(8), read_u32(12));
    let payload = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(b))
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::Corrupt(format!("dimension product {h}x{w}x{b} overflows")))?;
    let body = &bytes[CUBE_HEADER_LEN..];
    if body.len() != payload {
        return Err(Error::Corrupt(format!(
            "payload is {} bytes, header implies {payload}",
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    HsiCube::new(h, w, b, data).map_err(|e| Error::Corrupt(e.to_string()))
}

fn anchors(extent: usize, patch: usize, stride: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..)
        .map(|n| n * stride)
        .take_while(|&a| a + patch <= extent)
        .collect();
    let last = extent - patch;
    if out.last() != Some(&last) {
        out.push(last);
    }
    out
}

/// Spatial patches at row-major anchors; the final row and column are
/// anchored against the far boundary so every pixel is covered.
pub fn extract_patches(
    cube: &HsiCube,
    size: (usize, usize),
    stride: (usize, usize),
) -> Result<Vec<HsiCube>> {
    let (ph, pw) = size;
    let (sh, sw) = stride;
    if ph == 0 || pw == 0 || sh == 0 || sw == 0 {
        return Err(Error::arg("patch size and stride must be positive"));
    }
    if ph > cube.height || pw > cube.width {
        return Err(Error::arg(format!(
            "patch {ph}x{pw} larger than cube {}x{}",
            cube.height, cube.width
        )));
    }
    let rows = anchors(cube.height, ph, sh);
    let cols = anchors(cube.width, pw, sw);
    let b = cube.bands;
    let mut out = Vec::with_capacity(rows.len() * cols.len());
    for &r in &rows {
        for &c in &cols {
            let mut data = Vec::with_capacity(ph * pw * b);
            for i in r..r + ph {
                let start = cube.index(i, c, 0);
                data.extend_from_slice(&cube.data[start..start + pw * b]);
            }
            out.push(HsiCube::new(ph, pw, b, data)?);
        }
    }
    Ok(out)
}

/// Spatial transforms applied identically to every band.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Augment {
    Identity,
    /// Counter-clockwise quarter turn.
    Rot90,
    Rot180,
    Rot270,
    /// Mirror columns.
    FlipH,
    /// Mirror rows.
    FlipV,
}

impl Augment {
    pub const ALL: [Augment; 6] = [
        Augment::Identity,
        Augment::Rot90,
        Augment::Rot180,
        Augment::Rot270,
        Augment::FlipH,
        Augment::FlipV,
    ];
}

pub fn augment(patch: &HsiCube, op: Augment) -> HsiCube {
    let (h, w, b) = patch.dims();
    let (oh, ow) = match op {
        Augment::Rot90 | Augment::Rot270 => (w, h),
        _ => (h, w),
    };
    // source pixel for output pixel (i, j)
    let src = |i: usize, j: usize| -> (usize, usize) {
        match op {
            Augment::Identity => (i, j),
            Augment::Rot90 => (j, w - 1 - i),
            Augment::Rot180 => (h - 1 - i, w - 1 - j),
            Augment::Rot270 => (h - 1 - j, i),
            Augment::FlipH => (i, w - 1 - j),
            Augment::FlipV => (h - 1 - i, j),
        }
    };
    let mut data = Vec::with_capacity(patch.len());
    for i in 0..oh {
        for j in 0..ow {
            let (si, sj) = src(i, j);
            data.extend_from_slice(patch.spectrum(si, sj));
        }
    }
    HsiCube {
        height: oh,
        width: ow,
        bands: b,
        data,
    }
}

/// Global min-max rescale to `[0, 1]`.
pub fn normalize(cube: &HsiCube) -> Result<HsiCube> {
    let (lo, hi) = cube
        .data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if hi <= lo {
        return Err(Error::Degenerate(format!("constant cube (value {lo})")));
    }
    let span = hi - lo;
    cube.map(|v| (v - lo) / span)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize, b: usize) -> HsiCube {
        HsiCube::from_fn(h, w, b, |i, j, k| (i * 100 + j * 10 + k) as f64).unwrap()
    }

    #[test]
    fn one_voxel_encoding() {
        let c = HsiCube::filled(1, 1, 1, 1.0).unwrap();
        let bytes = encode_cube(&c).unwrap();
        assert_eq!(bytes.len(), 20);
        assert_eq!(&bytes[..4], b"HWC1");
        assert_eq!(&bytes[4..16], &[1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 0x3F80_0000);
    }

    #[test]
    fn bad_magic_is_format_error() {
        let mut bytes = encode_cube(&HsiCube::filled(2, 2, 2, 0.5).unwrap()).unwrap();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_cube(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_payload_is_corrupt() {
        let bytes = encode_cube(&HsiCube::filled(2, 2, 2, 0.5).unwrap()).unwrap();
        assert!(matches!(decode_cube(&bytes[..bytes.len() - 1]), Err(Error::Corrupt(_))));
        assert!(matches!(decode_cube(&bytes[..10]), Err(Error::Corrupt(_))));
    }

    #[test]
    fn overflowing_header_is_corrupt() {
        let mut bytes = b"HWC1".to_vec();
        for _ in 0..3 {
            bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        }
        assert!(matches!(decode_cube(&bytes), Err(Error::Corrupt(_))));
    }

    #[test]
    fn half_values_survive_round_trip() {
        let c = HsiCube::filled(2, 2, 2, 0.5).unwrap();
        let back = decode_cube(&encode_cube(&c).unwrap()).unwrap();
        assert!(back.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn nan_rejected_before_write() {
        let c = HsiCube {
            height: 1,
            width: 1,
            bands: 2,
            data: vec![0.0, f64::NAN],
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nan.hwc");
        assert!(matches!(save_cube(&c, &p), Err(Error::Validation(_))));
        assert!(!p.exists());
        assert!(HsiCube::new(1, 1, 1, vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn identical_cubes_identical_files() {
        let dir = tempfile::tempdir().unwrap();
        let c = ramp(3, 4, 2);
        save_cube(&c, dir.path().join("a")).unwrap();
        save_cube(&c.clone(), dir.path().join("b")).unwrap();
        assert_eq!(
            fs::read(dir.path().join("a")).unwrap(),
            fs::read(dir.path().join("b")).unwrap()
        );
    }

    #[test]
    fn exact_tiling() {
        let c = ramp(4, 4, 2);
        let p = extract_patches(&c, (2, 2), (2, 2)).unwrap();
        assert_eq!(p.len(), 4);
        assert_eq!(p[1].get(0, 0, 1), c.get(0, 2, 1));
        assert_eq!(p[3].get(1, 1, 0), c.get(3, 3, 0));
    }

    #[test]
    fn boundary_anchored_patches() {
        assert_eq!(anchors(5, 2, 2), vec![0, 2, 3]);
        let c = ramp(5, 5, 1);
        let p = extract_patches(&c, (2, 2), (2, 2)).unwrap();
        assert_eq!(p.len(), 9);
        // patch (row 2, col 2) is anchored at (3, 3)
        assert_eq!(p[8].get(0, 0, 0), c.get(3, 3, 0));
    }

    #[test]
    fn oversized_patch_rejected() {
        let c = ramp(4, 4, 1);
        assert!(matches!(
            extract_patches(&c, (8, 8), (1, 1)),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn identity_and_involutions() {
        let c = ramp(3, 5, 2);
        assert_eq!(augment(&c, Augment::Identity), c);
        let twice = augment(&augment(&c, Augment::Rot180), Augment::Rot180);
        assert_eq!(twice, c);
    }

    #[test]
    fn flip_h_reverses_columns() {
        let c = HsiCube::from_fn(2, 4, 1, |_, j, _| j as f64).unwrap();
        let f = augment(&c, Augment::FlipH);
        for i in 0..2 {
            let row: Vec<f64> = (0..4).map(|j| f.get(i, j, 0)).collect();
            assert_eq!(row, vec![3.0, 2.0, 1.0, 0.0]);
        }
    }

    #[test]
    fn rot90_moves_top_right_to_top_left() {
        let c = ramp(2, 3, 1);
        let r = augment(&c, Augment::Rot90);
        assert_eq!(r.dims(), (3, 2, 1));
        assert_eq!(r.get(0, 0, 0), c.get(0, 2, 0));
    }

    #[test]
    fn normalize_cases() {
        let c = HsiCube::new(1, 2, 1, vec![0.0, 255.0]).unwrap();
        assert_eq!(normalize(&c).unwrap().data(), &[0.0, 1.0]);
        let unit = HsiCube::new(1, 3, 1, vec![0.0, 0.25, 1.0]).unwrap();
        assert_eq!(normalize(&unit).unwrap(), unit);
        let flat = HsiCube::filled(2, 2, 2, 3.0).unwrap();
        assert!(matches!(normalize(&flat), Err(Error::Degenerate(_))));
    }
}
