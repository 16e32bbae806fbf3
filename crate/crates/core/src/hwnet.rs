//! The hyper-weight network: three pseudo-3D layers
//! (`3x3x1 conv -> ReLU -> 1x1x3 conv -> ReLU`), a full `3x3x3` convolution
//! down to one channel, and a softmax over the whole cube scaled by the
//! element count so the predicted weights average to one.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Backend, Eager, Tape, Tensor, Var};
use crate::cube::HsiCube;
use crate::error::{Error, Result};

pub const DEFAULT_CHANNELS: usize = 16;
pub const WEIGHTS_MAGIC: &[u8; 4] = b"HWN1";

/// Strictly positive per-element weights with mean one.
pub type WeightMap = HsiCube;

const BLOCK_NAMES: [&str; 7] = [
    "l1.spatial",
    "l1.spectral",
    "l2.spatial",
    "l2.spectral",
    "l3.spatial",
    "l3.spectral",
    "head",
];

/// One convolution: kernel `[c_out, c_in, kh, kw, kb]` and per-channel bias.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlock {
    pub kernel: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HwnetParams {
    channels: usize,
    blocks: Vec<ConvBlock>,
}

fn block_shapes(channels: usize) -> Vec<[usize; 5]> {
    let c = channels;
    vec![
        [c, 1, 3, 3, 1],
        [c, c, 1, 1, 3],
        [c, c, 3, 3, 1],
        [c, c, 1, 1, 3],
        [c, c, 3, 3, 1],
        [c, c, 1, 1, 3],
        [1, c, 3, 3, 3],
    ]
}

impl HwnetParams {
    /// Fan-in scaled normal kernels (`std = sqrt(2 / fan_in)`), zero biases.
    pub fn init(channels: usize, seed: u64) -> Result<Self> {
        if channels == 0 {
            return Err(Error::arg("channels must be at least 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blocks = block_shapes(channels)
            .into_iter()
            .map(|s| {
                let fan_in = (s[1] * s[2] * s[3] * s[4]) as f64;
                let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
                let n = s.iter().product();
                let k = (0..n).map(|_| normal.sample(&mut rng)).collect();
                ConvBlock {
                    kernel: Tensor::from_parts(s.to_vec(), k),
                    bias: Tensor::zeros(&[s[0]]),
                }
            })
            .collect();
        Ok(Self { channels, blocks })
    }

    /// Parameters of the same architecture with every entry zero.
    pub fn zeros_like(&self) -> Self {
        self.map(|_| 0.0)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn blocks(&self) -> &[ConvBlock] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [ConvBlock] {
        &mut self.blocks
    }

    /// Closed-form parameter count for `channels`.
    pub fn count_for(channels: usize) -> usize {
        let c = channels;
        let first = 9 * c + c + 3 * c * c + c;
        let middle = 9 * c * c + c + 3 * c * c + c;
        let head = 27 * c + 1;
        first + 2 * middle + head
    }

    pub fn param_count(&self) -> usize {
        self.blocks.iter().map(|b| b.kernel.len() + b.bias.len()).sum()
    }

    /// Every parameter in storage order: kernel then bias, block by block.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for b in &self.blocks {
            out.extend_from_slice(b.kernel.data());
            out.extend_from_slice(b.bias.data());
        }
        out
    }

    pub fn from_flat(&self, values: &[f64]) -> Result<Self> {
        if values.len() != self.param_count() {
            return Err(Error::arg(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                values.len()
            )));
        }
        let mut out = self.clone();
        let mut rest = values;
        for b in &mut out.blocks {
            for t in [&mut b.kernel, &mut b.bias] {
                let (head, tail) = rest.split_at(t.len());
                t.data_mut().copy_from_slice(head);
                rest = tail;
            }
        }
        Ok(out)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let blocks = self
            .blocks
            .iter()
            .map(|b| ConvBlock {
                kernel: b.kernel.map(&f),
                bias: b.bias.map(&f),
            })
            .collect();
        Self {
            channels: self.channels,
            blocks,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().all(|b| b.kernel.is_finite() && b.bias.is_finite())
    }

    /// Whether every parameter survives the f32 weight file.
    pub fn is_storable(&self) -> bool {
        self.flat().iter().all(|v| v.abs() <= f32::MAX as f64)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.flat()
            .iter()
            .zip(other.flat())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Puts every parameter on `tape` as a differentiable leaf.
    pub fn on_tape(&self, tape: &mut Tape) -> Vec<(Var, Var)> {
        self.blocks
            .iter()
            .map(|b| (tape.leaf(b.kernel.clone()), tape.leaf(b.bias.clone())))
            .collect()
    }

    /// Collects per-block adjoints from a backward pass.
    pub fn gradients_from(&self, vars: &[(Var, Var)], grads: &crate::autodiff::Gradients) -> Self {
        let blocks = self
            .blocks
            .iter()
            .zip(vars)
            .map(|(b, &(k, bias))| ConvBlock {
                kernel: grads.get_or_zeros(k, b.kernel.shape()),
                bias: grads.get_or_zeros(bias, b.bias.shape()),
            })
            .collect();
        Self {
            channels: self.channels,
            blocks,
        }
    }

    /// Zeroes the final convolution so the network emits uniform weights.
    pub fn zero_head(&mut self) {
        let head = self.blocks.last_mut().expect("network has a head");
        head.kernel = Tensor::zeros(head.kernel.shape());
        head.bias = Tensor::zeros(head.bias.shape());
    }
}

pub(crate) fn check_receptive_field(y: &HsiCube) -> Result<()> {
    let (h, w, b) = y.dims();
    if h < 3 || w < 3 || b < 3 {
        return Err(Error::arg(format!(
            "cube {h}x{w}x{b} is smaller than the 3x3x3 receptive field"
        )));
    }
    Ok(())
}

/// Network forward over any backend; `blocks` are `(kernel, bias)` values.
pub(crate) fn forward_on<B: Backend>(b: &mut B, blocks: &[(B::Value, B::Value)], y: &B::Value) -> B::Value {
    let (head, body) = blocks.split_last().expect("network has a head");
    let mut x = y.clone();
    for (k, bias) in body {
        let c = b.conv3d(&x, k);
        let c = b.channel_bias(&c, bias);
        x = b.relu(&c);
    }
    let logits = b.conv3d(&x, &head.0);
    let logits = b.channel_bias(&logits, &head.1);
    b.softmax_scaled(&logits)
}

/// Predicts the weight map for `y`.
pub fn hwnet_forward(params: &HwnetParams, y: &HsiCube) -> Result<WeightMap> {
    check_receptive_field(y)?;
    let blocks: Vec<(Tensor, Tensor)> = params
        .blocks
        .iter()
        .map(|b| (b.kernel.clone(), b.bias.clone()))
        .collect();
    let w = forward_on(&mut Eager, &blocks, &y.to_tensor());
    HsiCube::from_tensor(&w)
}

/// Records the forward pass on `tape`; returns the parameter leaves and the
/// weight-map node.
pub fn hwnet_forward_taped(params: &HwnetParams, tape: &mut Tape, y: Var) -> Result<(Vec<(Var, Var)>, Var)> {
    check_receptive_field(&HsiCube::from_tensor(tape.get(y))?)?;
    let vars = params.on_tape(tape);
    let w = forward_on(tape, &vars, &y);
    Ok((vars, w))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightsHeader {
    channels: usize,
    layers: Vec<LayerShape>,
    dtype: String,
}

#[derive(Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct LayerShape {
    name: String,
    kernel: Vec<usize>,
    bias: Vec<usize>,
}

fn header_for(channels: usize) -> WeightsHeader {
    WeightsHeader {
        channels,
        layers: block_shapes(channels)
            .iter()
            .zip(BLOCK_NAMES)
            .map(|(s, name)| LayerShape {
                name: name.to_string(),
                kernel: s.to_vec(),
                bias: vec![s[0]],
            })
            .collect(),
        dtype: "f32".to_string(),
    }
}

pub fn encode_params(params: &HwnetParams) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&header_for(params.channels))?;
    let mut out = Vec::with_capacity(8 + header.len() + 4 * params.param_count());
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for v in params.flat() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_params(bytes: &[u8]) -> Result<HwnetParams> {
    if bytes.len() < 4 || &bytes[..4] != WEIGHTS_MAGIC {
        return Err(Error::Format("missing HWN1 magic".into()));
    }
    if bytes.len() < 8 {
        return Err(Error::Corrupt("truncated weights header".into()));
    }
    let hlen = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let header_bytes = bytes
        .get(8..8 + hlen)
        .ok_or_else(|| Error::Corrupt("truncated weights header".into()))?;
    let header: WeightsHeader = serde_json::from_slice(header_bytes)
        .map_err(|e| Error::Format(format!("bad weights header: {e}")))?;
    if header.dtype != "f32" {
        return Err(Error::Format(format!("unsupported dtype {:?}", header.dtype)));
    }
    if header.channels == 0 {
        return Err(Error::Format("channels must be at least 1".into()));
    }
    let expected = header_for(header.channels);
    if header.layers != expected.layers {
        return Err(Error::Format(format!(
            "layer shapes do not match a {}-channel network",
            header.channels
        )));
    }
    let template = HwnetParams::init(header.channels, 0)?;
    let payload = &bytes[8 + hlen..];
    let n = template.param_count();
    if payload.len() != 4 * n {
        return Err(Error::Corrupt(format!(
            "expected {} payload bytes, found {}",
            4 * n,
            payload.len()
        )));
    }
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Corrupt("non-finite parameter".into()));
    }
    template.from_flat(&values)
}

pub fn save_params(params: &HwnetParams, path: impl AsRef<Path>) -> Result<()> {
    if !params.is_storable() {
        return Err(Error::Validation("parameters are non-finite or exceed the f32 range".into()));
    }
    fs::write(path, encode_params(params)?)?;
    Ok(())
}

pub fn load_params(path: impl AsRef<Path>) -> Result<HwnetParams> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    decode_params(&fs::read(path)?)
}
