//! Regularizer catalogue: nuclear norm on the mode-3 unfolding, anisotropic
//! spatial TV, spectral TV, and weighted composites of those.
//!
//! The nuclear norm acts on the `(h*w) x b` matrix whose rows are pixel
//! spectra, which is exactly the band-fastest cube layout read row-major.
//! TV terms use forward differences with a zero last difference.

use serde::{Deserialize, Serialize};

use crate::autodiff::kernels::{self, Axis};
use crate::autodiff::{Backend, Eager, Tensor};
use crate::cube::HsiCube;
use crate::error::{Error, Result};

pub const DEFAULT_SMOOTHING_EPS: f64 = 1e-3;
/// Inner dual iterations of the TV prox at inference.
pub const DEFAULT_TV_INNER_ITERS: usize = 30;
/// Inner dual iterations of the TV prox inside unrolled training solves.
pub const TRAINING_TV_INNER_ITERS: usize = 10;

pub const DEFAULT_LAMBDA_NUCLEAR: f64 = 3.0;
pub const DEFAULT_LAMBDA_SPATIAL_TV: f64 = 0.5;
pub const DEFAULT_LAMBDA_SPECTRAL_TV: f64 = 0.2;

/// A single non-composite penalty.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Penalty {
    NuclearNorm,
    SpatialTv,
    SpectralTv,
}

impl Penalty {
    pub fn short_name(self) -> &'static str {
        match self {
            Penalty::NuclearNorm => "N",
            Penalty::SpatialTv => "T",
            Penalty::SpectralTv => "TS",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "N" | "nuclear_norm" | "nuclear" => Some(Penalty::NuclearNorm),
            "T" | "spatial_tv" | "tv" => Some(Penalty::SpatialTv),
            "TS" | "spectral_tv" | "tvs" => Some(Penalty::SpectralTv),
            _ => None,
        }
    }

    pub fn default_lambda(self) -> f64 {
        match self {
            Penalty::NuclearNorm => DEFAULT_LAMBDA_NUCLEAR,
            Penalty::SpatialTv => DEFAULT_LAMBDA_SPATIAL_TV,
            Penalty::SpectralTv => DEFAULT_LAMBDA_SPECTRAL_TV,
        }
    }

    fn tv_axes(self) -> &'static [Axis] {
        match self {
            Penalty::SpatialTv => &[Axis::Height, Axis::Width],
            Penalty::SpectralTv => &[Axis::Band],
            Penalty::NuclearNorm => &[],
        }
    }

    pub fn value(self, x: &Tensor) -> f64 {
        match self {
            Penalty::NuclearNorm => {
                let (rows, cols) = unfolding(x);
                kernels::singular_values(x.data(), rows, cols).iter().sum()
            }
            _ => self
                .tv_axes()
                .iter()
                .map(|&a| kernels::diff_forward(x, a).data().iter().map(|v| v.abs()).sum::<f64>())
                .sum(),
        }
    }

    /// Huber-smoothed value whose gradient is [`Penalty::smoothed_gradient`].
    pub fn smoothed_value(self, x: &Tensor, eps: f64) -> f64 {
        match self {
            Penalty::NuclearNorm => {
                let (rows, cols) = unfolding(x);
                kernels::singular_values(x.data(), rows, cols)
                    .iter()
                    .map(|&s| huber(s, eps))
                    .sum()
            }
            _ => self
                .tv_axes()
                .iter()
                .map(|&a| {
                    kernels::diff_forward(x, a)
                        .data()
                        .iter()
                        .map(|&v| huber(v, eps))
                        .sum::<f64>()
                })
                .sum(),
        }
    }

    pub fn smoothed_gradient(self, x: &Tensor, eps: f64) -> Tensor {
        match self {
            Penalty::NuclearNorm => {
                let (rows, cols) = unfolding(x);
                let g = kernels::spectral_map(x.data(), rows, cols, |s| (s / eps).min(1.0));
                Tensor::from_parts(x.shape().to_vec(), g)
            }
            _ => {
                let mut acc = Tensor::zeros(x.shape());
                for &a in self.tv_axes() {
                    let d = kernels::diff_forward(x, a).map(|t| huber_slope(t, eps));
                    let back = kernels::diff_adjoint(&d, a);
                    acc = acc.zip_map(&back, |u, v| u + v);
                }
                acc
            }
        }
    }

    /// `argmin_x 0.5 ||x - a||^2 + tau R(x)`, written against [`Backend`] so
    /// the unrolled solver can differentiate through it.
    pub fn prox_with<B: Backend>(
        self,
        b: &mut B,
        a: &B::Value,
        tau: f64,
        inner_iters: usize,
    ) -> B::Value {
        match self {
            Penalty::NuclearNorm => {
                let (rows, cols) = unfolding(b.value(a));
                b.svt(a, rows, cols, tau)
            }
            _ => tv_prox(b, a, self.tv_axes(), tau, inner_iters, None),
        }
    }
}

fn unfolding(x: &Tensor) -> (usize, usize) {
    let (c, h, w, bands) = x.volume_dims();
    (c * h * w, bands)
}

fn huber(t: f64, eps: f64) -> f64 {
    if t.abs() < eps {
        t * t / (2.0 * eps)
    } else {
        t.abs() - eps / 2.0
    }
}

fn huber_slope(t: f64, eps: f64) -> f64 {
    if t.abs() < eps {
        t / eps
    } else {
        t.signum()
    }
}

// Projected gradient on the dual of anisotropic TV:
//   x = a - tau * sum_d D_d^T p_d,  |p_d| <= 1,
// step 1 / (tau * ||D||^2) with ||D||^2 <= 4 per axis. The dual objective
// 0.5 ||x||^2 is non-increasing across iterations.
fn tv_prox<B: Backend>(
    b: &mut B,
    a: &B::Value,
    axes: &[Axis],
    tau: f64,
    iters: usize,
    mut trace: Option<&mut Vec<f64>>,
) -> B::Value {
    let shape = b.value(a).shape().to_vec();
    let step = 1.0 / (tau * 4.0 * axes.len() as f64);
    let mut duals: Vec<B::Value> = axes
        .iter()
        .map(|_| b.constant(Tensor::zeros(&shape)))
        .collect();
    let mut x = a.clone();
    if let Some(t) = trace.as_deref_mut() {
        t.push(0.5 * b.value(&x).norm().powi(2));
    }
    for _ in 0..iters {
        for (p, &axis) in duals.iter_mut().zip(axes) {
            let dx = b.diff(&x, axis);
            let dx = b.scale(&dx, step);
            let moved = b.add(p, &dx);
            *p = b.clamp(&moved, -1.0, 1.0);
        }
        let mut div = b.diff_adjoint(&duals[0], axes[0]);
        for (p, &axis) in duals.iter().zip(axes).skip(1) {
            let t = b.diff_adjoint(p, axis);
            div = b.add(&div, &t);
        }
        let div = b.scale(&div, tau);
        x = b.sub(a, &div);
        if let Some(t) = trace.as_deref_mut() {
            t.push(0.5 * b.value(&x).norm().powi(2));
        }
    }
    x
}

/// TV prox that also returns the inner dual objective after every iteration.
pub fn tv_prox_with_trace(
    penalty: Penalty,
    a: &HsiCube,
    tau: f64,
    inner_iters: usize,
) -> Result<(HsiCube, Vec<f64>)> {
    if penalty == Penalty::NuclearNorm {
        return Err(Error::arg("nuclear norm prox has no inner iterations"));
    }
    let mut trace = Vec::with_capacity(inner_iters + 1);
    let x = tv_prox(
        &mut Eager,
        &a.to_tensor(),
        penalty.tv_axes(),
        tau,
        inner_iters,
        Some(&mut trace),
    );
    Ok((HsiCube::from_tensor(&x)?, trace))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompositeMember {
    pub kind: Penalty,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum RegularizerKind {
    Single(Penalty),
    Composite(Vec<CompositeMember>),
}

/// A regularizer `R` with its trade-off `lambda`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpecRepr", into = "SpecRepr")]
pub struct RegularizerSpec {
    pub kind: RegularizerKind,
    pub lambda: f64,
    pub smoothing_eps: f64,
}

impl RegularizerSpec {
    pub fn new(kind: RegularizerKind, lambda: f64) -> Result<Self> {
        let spec = Self {
            kind,
            lambda,
            smoothing_eps: DEFAULT_SMOOTHING_EPS,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn single(p: Penalty, lambda: f64) -> Self {
        Self {
            kind: RegularizerKind::Single(p),
            lambda,
            smoothing_eps: DEFAULT_SMOOTHING_EPS,
        }
    }

    pub fn nuclear(lambda: f64) -> Self {
        Self::single(Penalty::NuclearNorm, lambda)
    }

    pub fn spatial_tv(lambda: f64) -> Self {
        Self::single(Penalty::SpatialTv, lambda)
    }

    pub fn spectral_tv(lambda: f64) -> Self {
        Self::single(Penalty::SpectralTv, lambda)
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.smoothing_eps = eps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::arg(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.smoothing_eps > 0.0) {
            return Err(Error::arg("smoothing eps must be positive"));
        }
        if let RegularizerKind::Composite(members) = &self.kind {
            if members.is_empty() {
                return Err(Error::arg("composite regularizer needs at least one member"));
            }
            if members.iter().any(|m| !(m.weight > 0.0)) {
                return Err(Error::arg("composite weights must be positive"));
            }
        }
        Ok(())
    }

    /// Splits `"N+T+TS"` into one single-penalty spec per term, each at its
    /// default lambda.
    pub fn parse_combo(combo: &str) -> Result<Vec<Self>> {
        let specs: Option<Vec<Self>> = combo
            .split('+')
            .map(|t| Penalty::parse(t).map(|p| Self::single(p, p.default_lambda())))
            .collect();
        match specs {
            Some(v) if !v.is_empty() => Ok(v),
            _ => Err(Error::arg(format!("unrecognised source-model combination {combo:?}"))),
        }
    }

    /// One composite spec `sum_i lambda_i R_i` from `"N+T"`, with lambda 1
    /// and each member weighted by its default lambda.
    pub fn composite_from_combo(combo: &str) -> Result<Self> {
        let members = Self::parse_combo(combo)?
            .into_iter()
            .map(|s| match s.kind {
                RegularizerKind::Single(p) => CompositeMember {
                    kind: p,
                    weight: s.lambda,
                },
                RegularizerKind::Composite(_) => unreachable!(),
            })
            .collect();
        Self::new(RegularizerKind::Composite(members), 1.0)
    }

    /// `(penalty, weight)` terms; a single kind is one term of weight 1.
    pub fn terms(&self) -> Vec<(Penalty, f64)> {
        match &self.kind {
            RegularizerKind::Single(p) => vec![(*p, 1.0)],
            RegularizerKind::Composite(ms) => ms.iter().map(|m| (m.kind, m.weight)).collect(),
        }
    }

    pub fn label(&self) -> String {
        self.terms()
            .iter()
            .map(|(p, _)| p.short_name())
            .collect::<Vec<_>>()
            .join("+")
    }

    pub fn value_tensor(&self, x: &Tensor) -> f64 {
        self.terms().iter().map(|(p, w)| w * p.value(x)).sum()
    }

    pub fn smoothed_value_tensor(&self, x: &Tensor) -> f64 {
        self.terms()
            .iter()
            .map(|(p, w)| w * p.smoothed_value(x, self.smoothing_eps))
            .sum()
    }

    pub fn smoothed_gradient_tensor(&self, x: &Tensor) -> Tensor {
        let mut acc = Tensor::zeros(x.shape());
        for (p, w) in self.terms() {
            let g = p.smoothed_gradient(x, self.smoothing_eps);
            acc = acc.zip_map(&g, |a, v| a + w * v);
        }
        acc
    }
}

/// `R(x)` without the trade-off factor.
pub fn reg_value(spec: &RegularizerSpec, x: &HsiCube) -> f64 {
    spec.value_tensor(&x.to_tensor())
}

/// `argmin_X 0.5 ||X - a||^2 + tau R(X)`.
pub fn prox(spec: &RegularizerSpec, a: &HsiCube, tau: f64, inner_iters: usize) -> Result<HsiCube> {
    if !(tau > 0.0) {
        return Err(Error::arg(format!("prox step must be positive, got {tau}")));
    }
    let RegularizerKind::Single(p) = spec.kind else {
        return Err(Error::UnsupportedProx(spec.label()));
    };
    let out = p.prox_with(&mut Eager, &a.to_tensor(), tau, inner_iters);
    HsiCube::from_tensor(&out)
}

/// Gradient of the Huber-smoothed regularizer (without lambda).
pub fn grad_smoothed(spec: &RegularizerSpec, x: &HsiCube) -> HsiCube {
    let g = spec.smoothed_gradient_tensor(&x.to_tensor());
    HsiCube::from_tensor(&g).expect("gradient of a finite cube is finite")
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecRepr {
    kind: String,
    lambda: f64,
    #[serde(default = "default_eps")]
    eps: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    members: Vec<MemberRepr>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MemberRepr {
    kind: String,
    weight: f64,
}

fn default_eps() -> f64 {
    DEFAULT_SMOOTHING_EPS
}

fn penalty_name(p: Penalty) -> &'static str {
    match p {
        Penalty::NuclearNorm => "nuclear_norm",
        Penalty::SpatialTv => "spatial_tv",
        Penalty::SpectralTv => "spectral_tv",
    }
}

impl TryFrom<SpecRepr> for RegularizerSpec {
    type Error = Error;

    fn try_from(r: SpecRepr) -> Result<Self> {
        let kind = if r.kind == "composite" {
            let members = r
                .members
                .into_iter()
                .map(|m| {
                    Penalty::parse(&m.kind)
                        .map(|kind| CompositeMember {
                            kind,
                            weight: m.weight,
                        })
                        .ok_or_else(|| Error::arg(format!("unknown member kind {:?}", m.kind)))
                })
                .collect::<Result<Vec<_>>>()?;
            RegularizerKind::Composite(members)
        } else {
            if !r.members.is_empty() {
                return Err(Error::arg("members are only valid for kind \"composite\""));
            }
            RegularizerKind::Single(
                Penalty::parse(&r.kind)
                    .ok_or_else(|| Error::arg(format!("unknown regularizer kind {:?}", r.kind)))?,
            )
        };
        let spec = RegularizerSpec {
            kind,
            lambda: r.lambda,
            smoothing_eps: r.eps,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<RegularizerSpec> for SpecRepr {
    fn from(s: RegularizerSpec) -> Self {
        let (kind, members) = match s.kind {
            RegularizerKind::Single(p) => (penalty_name(p).to_string(), vec![]),
            RegularizerKind::Composite(ms) => (
                "composite".to_string(),
                ms.into_iter()
                    .map(|m| MemberRepr {
                        kind: penalty_name(m.kind).to_string(),
                        weight: m.weight,
                    })
                    .collect(),
            ),
        };
        SpecRepr {
            kind,
            lambda: s.lambda,
            eps: s.smoothing_eps,
            members,
        }
    }
}
