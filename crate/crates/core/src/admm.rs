//! ADMM for the weighted denoising problem
//!
//! ```text
//! min_X  0.5 ||W ⊙ (Y - X)||^2 + lambda R(X)
//! ```
//!
//! split as `X = Z`. Each iteration solves the Z-subproblem in closed form,
//! applies the prox of `lambda/mu R` to `Z - Gamma/mu`, and ascends the
//! scaled dual. A composite `R = sum_i w_i R_i` gets one X block and one dual
//! per member; the reported estimate is the mean of the blocks.
//!
//! The iteration is written against [`Backend`], so the converged solver and
//! the unrolled, differentiable solver execute the same arithmetic.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Backend, Eager, Tape, Tensor, Var};
use crate::cube::HsiCube;
use crate::error::{Error, Result};
use crate::regularizer::{Penalty, RegularizerSpec, DEFAULT_TV_INNER_ITERS};

pub const DEFAULT_MU: f64 = 0.5;
pub const DEFAULT_TAPE_BUDGET_BYTES: u64 = 2 << 30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub mu: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub unroll_k: usize,
    pub prox_inner_iters: usize,
    /// Upper bound on the estimated tape size of an unrolled solve.
    pub tape_budget_bytes: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            mu: DEFAULT_MU,
            max_iters: 200,
            tol: 1e-5,
            unroll_k: 10,
            prox_inner_iters: DEFAULT_TV_INNER_ITERS,
            tape_budget_bytes: DEFAULT_TAPE_BUDGET_BYTES,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::arg(format!("mu must be positive, got {}", self.mu)));
        }
        if self.unroll_k == 0 {
            return Err(Error::arg("unroll_k must be at least 1"));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::arg("tol must be non-negative"));
        }
        Ok(())
    }
}

/// Iterate bundle after the last completed iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct SolverState {
    pub x: HsiCube,
    pub z: HsiCube,
    /// One scaled dual per regularizer block.
    pub gamma: Vec<HsiCube>,
    pub iter: usize,
    pub primal_residual: f64,
    pub rel_change: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveResult {
    pub x_hat: HsiCube,
    pub iterations: usize,
    pub objective_trace: Vec<f64>,
    /// `||X - Z||` after each iteration (root-sum-square over blocks).
    pub residual_trace: Vec<f64>,
    pub converged: bool,
    pub state: SolverState,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub converged: bool,
    pub objective_trace: Vec<f64>,
}

impl SolveResult {
    pub fn report(&self) -> SolveReport {
        SolveReport {
            iterations: self.iterations,
            converged: self.converged,
            objective_trace: self.objective_trace.clone(),
        }
    }
}

/// Closed-form Z-step `(W^2 Y + mu X + Gamma) / (W^2 + mu)`.
pub fn z_update(y: &HsiCube, w: &HsiCube, x: &HsiCube, gamma: &HsiCube, mu: f64) -> Result<HsiCube> {
    y.require_same_shape(w, "weight map")?;
    y.require_same_shape(x, "x")?;
    y.require_same_shape(gamma, "gamma")?;
    if !(mu > 0.0) {
        return Err(Error::arg("mu must be positive"));
    }
    let b = &mut Eager;
    let w2 = b.square(&w.to_tensor());
    let w2y = b.mul(&w2, &y.to_tensor());
    let denom = b.offset(&w2, mu);
    let z = z_step(b, &w2y, &denom, &[x.to_tensor()], &[gamma.to_tensor()], mu);
    HsiCube::from_tensor(&z)
}

/// `0.5 ||W ⊙ (Y - X)||^2 + lambda R(X)`.
pub fn objective(y: &HsiCube, w: &HsiCube, x: &HsiCube, spec: &RegularizerSpec) -> f64 {
    let fid: f64 = y
        .data()
        .iter()
        .zip(w.data())
        .zip(x.data())
        .map(|((&yv, &wv), &xv)| {
            let r = wv * (yv - xv);
            r * r
        })
        .sum();
    0.5 * fid + spec.lambda * spec.value_tensor(&x.to_tensor())
}

fn z_step<B: Backend>(
    b: &mut B,
    w2y: &B::Value,
    denom: &B::Value,
    xs: &[B::Value],
    gammas: &[B::Value],
    mu: f64,
) -> B::Value {
    let mut acc = w2y.clone();
    for (x, g) in xs.iter().zip(gammas) {
        let mx = b.scale(x, mu);
        acc = b.add(&acc, &mx);
        acc = b.add(&acc, g);
    }
    b.div(&acc, denom)
}

/// ADMM iterate bundle over an arbitrary backend.
pub(crate) struct Iterates<B: Backend> {
    terms: Vec<(Penalty, f64)>,
    lambda: f64,
    mu: f64,
    inner_iters: usize,
    w2y: B::Value,
    denom: B::Value,
    xs: Vec<B::Value>,
    gammas: Vec<B::Value>,
    z: B::Value,
    x: B::Value,
}

impl<B: Backend> Iterates<B> {
    pub(crate) fn new(
        b: &mut B,
        y: &B::Value,
        w: &B::Value,
        x0: &B::Value,
        spec: &RegularizerSpec,
        mu: f64,
        inner_iters: usize,
    ) -> Self {
        let terms = spec.terms();
        let n = terms.len();
        let w2 = b.square(w);
        let w2y = b.mul(&w2, y);
        let denom = b.offset(&w2, n as f64 * mu);
        let zeros = Tensor::zeros(b.value(y).shape());
        let gammas = (0..n).map(|_| b.constant(zeros.clone())).collect();
        Self {
            terms,
            lambda: spec.lambda,
            mu,
            inner_iters,
            w2y,
            denom,
            xs: vec![x0.clone(); n],
            gammas,
            z: y.clone(),
            x: x0.clone(),
        }
    }

    pub(crate) fn step(&mut self, b: &mut B) {
        let mu = self.mu;
        self.z = z_step(b, &self.w2y, &self.denom, &self.xs, &self.gammas, mu);
        for (i, &(penalty, weight)) in self.terms.iter().enumerate() {
            let shifted = b.scale(&self.gammas[i], 1.0 / mu);
            let v = b.sub(&self.z, &shifted);
            let x = penalty.prox_with(b, &v, self.lambda * weight / mu, self.inner_iters);
            let r = b.sub(&x, &self.z);
            let r = b.scale(&r, mu);
            self.gammas[i] = b.add(&self.gammas[i], &r);
            self.xs[i] = x;
        }
        self.x = if self.xs.len() == 1 {
            self.xs[0].clone()
        } else {
            let mut acc = self.xs[0].clone();
            for x in &self.xs[1..] {
                acc = b.add(&acc, x);
            }
            b.scale(&acc, 1.0 / self.xs.len() as f64)
        };
    }

    pub(crate) fn x(&self) -> &B::Value {
        &self.x
    }

    fn primal_residual(&self, b: &B) -> f64 {
        let z = b.value(&self.z);
        self.xs
            .iter()
            .map(|x| b.value(x).distance(z).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

fn check_inputs(y: &HsiCube, w: &HsiCube, spec: &RegularizerSpec, cfg: &SolverConfig) -> Result<()> {
    y.require_same_shape(w, "weight map")?;
    if w.data().iter().any(|&v| !(v > 0.0)) {
        return Err(Error::arg("weights must be strictly positive"));
    }
    spec.validate()?;
    cfg.validate()
}

/// Converged solve from the standard initialization `X0 = Y`, `Gamma0 = 0`.
pub fn solve(y: &HsiCube, w: &HsiCube, spec: &RegularizerSpec, cfg: &SolverConfig) -> Result<SolveResult> {
    solve_from(y, w, spec, cfg, y)
}

/// Converged solve from an arbitrary `X0`.
pub fn solve_from(
    y: &HsiCube,
    w: &HsiCube,
    spec: &RegularizerSpec,
    cfg: &SolverConfig,
    x0: &HsiCube,
) -> Result<SolveResult> {
    check_inputs(y, w, spec, cfg)?;
    y.require_same_shape(x0, "initial iterate")?;
    let b = &mut Eager;
    let mut it = Iterates::new(
        b,
        &y.to_tensor(),
        &w.to_tensor(),
        &x0.to_tensor(),
        spec,
        cfg.mu,
        cfg.prox_inner_iters,
    );
    let mut objective_trace = Vec::new();
    let mut residual_trace = Vec::new();
    let mut converged = false;
    let mut rel_change = f64::INFINITY;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        let prev = it.x().clone();
        it.step(b);
        iterations += 1;
        let x = HsiCube::from_tensor(it.x()).map_err(|_| Error::Divergence { iteration: iterations })?;
        if !it.z.is_finite() || it.gammas.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { iteration: iterations });
        }
        rel_change = x.to_tensor().distance(&prev) / prev.norm().max(1.0);
        objective_trace.push(objective(y, w, &x, spec));
        residual_trace.push(it.primal_residual(b));
        if rel_change < cfg.tol {
            converged = true;
            break;
        }
    }
    let state = SolverState {
        x: HsiCube::from_tensor(it.x())?,
        z: HsiCube::from_tensor(&it.z)?,
        gamma: it
            .gammas
            .iter()
            .map(HsiCube::from_tensor)
            .collect::<Result<_>>()?,
        iter: iterations,
        primal_residual: residual_trace.last().copied().unwrap_or(0.0),
        rel_change,
    };
    Ok(SolveResult {
        x_hat: state.x.clone(),
        iterations,
        objective_trace,
        residual_trace,
        converged,
        state,
    })
}

/// Rough tape footprint of a `k`-iteration unrolled solve on `m` elements.
pub fn estimate_tape_bytes(m: usize, bands: usize, spec: &RegularizerSpec, cfg: &SolverConfig) -> u64 {
    let per_value = (m * 8) as u64;
    let per_iter: u64 = spec
        .terms()
        .iter()
        .map(|(p, _)| match p {
            // prox input/output, dual update, plus the SVD factors
            Penalty::NuclearNorm => 8 * per_value + ((m + bands * bands) * 8 + bands * 8) as u64,
            Penalty::SpatialTv => (6 + 12 * cfg.prox_inner_iters as u64) * per_value,
            Penalty::SpectralTv => (6 + 7 * cfg.prox_inner_iters as u64) * per_value,
        })
        .sum::<u64>()
        + 4 * per_value;
    cfg.unroll_k as u64 * per_iter + 6 * per_value
}

/// Records exactly `cfg.unroll_k` iterations from `X0 = Y` on `b`.
pub(crate) fn unroll_on<B: Backend>(
    b: &mut B,
    y: &B::Value,
    w: &B::Value,
    spec: &RegularizerSpec,
    cfg: &SolverConfig,
) -> B::Value {
    let mut it = Iterates::new(b, y, w, y, spec, cfg.mu, cfg.prox_inner_iters);
    for _ in 0..cfg.unroll_k {
        it.step(b);
    }
    it.x().clone()
}

pub(crate) fn check_tape_budget(y: &HsiCube, spec: &RegularizerSpec, cfg: &SolverConfig) -> Result<()> {
    let estimate = estimate_tape_bytes(y.len(), y.bands(), spec, cfg);
    if estimate > cfg.tape_budget_bytes {
        return Err(Error::Resource {
            estimate,
            budget: cfg.tape_budget_bytes,
        });
    }
    Ok(())
}

/// A recorded K-step solve; `w` is a differentiable leaf.
pub struct UnrolledSolve {
    pub tape: Tape,
    pub w: Var,
    pub x_hat_var: Var,
    pub x_hat: HsiCube,
}

impl UnrolledSolve {
    /// Vector-Jacobian product `(d x_hat / d w)^T cotangent`.
    pub fn vjp_w(&self, cotangent: &HsiCube) -> Result<HsiCube> {
        let g = self.tape.backward(self.x_hat_var, cotangent.to_tensor())?;
        HsiCube::from_tensor(&g.get_or_zeros(self.w, &[1, self.x_hat.height(), self.x_hat.width(), self.x_hat.bands()]))
    }
}

/// K iterations of ADMM recorded on a fresh tape.
pub fn unrolled_solve(
    y: &HsiCube,
    w: &HsiCube,
    spec: &RegularizerSpec,
    cfg: &SolverConfig,
) -> Result<UnrolledSolve> {
    check_inputs(y, w, spec, cfg)?;
    check_tape_budget(y, spec, cfg)?;
    let mut tape = Tape::new();
    let yv = tape.input(y.to_tensor());
    let wv = tape.leaf(w.to_tensor());
    let x = unroll_on(&mut tape, &yv, &wv, spec, cfg);
    let x_hat = HsiCube::from_tensor(tape.get(x)).map_err(|_| Error::Divergence { iteration: cfg.unroll_k })?;
    Ok(UnrolledSolve {
        tape,
        w: wv,
        x_hat_var: x,
        x_hat,
    })
}
