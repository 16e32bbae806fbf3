//! Numerical side of the generalization analysis: the linearized resolvent,
//! the source/target model divergences `A1`, `A2`, their combination `U`,
//! Lipschitz and uniqueness probes, and the sample-complexity term.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::admm::{solve, solve_from, SolverConfig};
use crate::autodiff::Tensor;
use crate::cube::HsiCube;
use crate::error::{Error, Result};
use crate::regularizer::RegularizerSpec;

pub const DEFAULT_WEIGHT_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoryConfig {
    /// Bound on cube entries.
    pub b_d: f64,
    /// Floor applied to weights inside theory computations.
    pub eps: f64,
    /// Upper bound on weights.
    pub b_h: f64,
    /// Loss bound; `None` uses `4 B_d^2`, the MSE bound on bounded data.
    pub b_l: Option<f64>,
    pub delta: f64,
    /// Element count; `None` takes it from the data.
    pub m: Option<usize>,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            b_d: crate::cube::DEFAULT_BOUND,
            eps: DEFAULT_WEIGHT_FLOOR,
            b_h: 2.0,
            b_l: None,
            delta: 0.05,
            m: None,
        }
    }
}

impl TheoryConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.b_d > 0.0) {
            return Err(Error::arg("B_d must be positive"));
        }
        if !(self.eps > 0.0 && self.eps <= self.b_h) {
            return Err(Error::arg("need 0 < eps <= B_H"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::arg("delta must lie in (0, 1)"));
        }
        if matches!(self.b_l, Some(b) if !(b > 0.0)) {
            return Err(Error::arg("B_l must be positive"));
        }
        Ok(())
    }

    pub fn loss_bound(&self) -> f64 {
        self.b_l.unwrap_or(4.0 * self.b_d * self.b_d)
    }

    /// Lipschitz constant of the MSE loss on bounded data, `4 B_d / sqrt(M)`.
    pub fn loss_lipschitz(&self, m: usize) -> f64 {
        4.0 * self.b_d / (m as f64).sqrt()
    }

    /// `4 B_d B_H / eps^2`, the Lipschitz bound of the weight-to-solution map.
    pub fn lipschitz_bound(&self) -> f64 {
        4.0 * self.b_d * self.b_h / (self.eps * self.eps)
    }
}

fn floored(w: &HsiCube, eps: f64) -> Result<HsiCube> {
    w.map(|v| v.max(eps))
}

/// `lambda * grad R(y)` with the smoothed gradient.
fn scaled_gradient(y: &Tensor, spec: &RegularizerSpec) -> Tensor {
    spec.smoothed_gradient_tensor(y).map(|g| spec.lambda * g)
}

/// `y - lambda / max(w, eps)^2 ⊙ grad R(y)`.
pub fn linearized_solve(y: &HsiCube, w: &HsiCube, spec: &RegularizerSpec, eps: f64) -> Result<HsiCube> {
    y.require_same_shape(w, "weight map")?;
    let w = floored(w, eps)?;
    let g = scaled_gradient(&y.to_tensor(), spec);
    let data = y
        .data()
        .iter()
        .zip(w.data())
        .zip(g.data())
        .map(|((&yv, &wv), &gv)| yv - gv / (wv * wv))
        .collect();
    HsiCube::new(y.height(), y.width(), y.bands(), data)
}

fn average_gradient(y: &Tensor, specs: &[RegularizerSpec]) -> Tensor {
    let mut acc = Tensor::zeros(y.shape());
    for s in specs {
        let g = scaled_gradient(y, s);
        acc = acc.zip_map(&g, |a, b| a + b);
    }
    let n = specs.len() as f64;
    acc.map(|v| v / n)
}

fn average_sq_norm(y: &Tensor, specs: &[RegularizerSpec]) -> f64 {
    specs
        .iter()
        .map(|s| scaled_gradient(y, s).norm().powi(2))
        .sum::<f64>()
        / specs.len() as f64
}

fn check_sets(sources: &[RegularizerSpec], targets: &[RegularizerSpec]) -> Result<()> {
    if sources.is_empty() || targets.is_empty() {
        return Err(Error::arg("source and target sets must be non-empty"));
    }
    Ok(())
}

/// `|| mean_s lambda grad R_s(y) - mean_t lambda grad R_t(y) ||_2`.
pub fn compute_a1(y: &HsiCube, sources: &[RegularizerSpec], targets: &[RegularizerSpec]) -> Result<f64> {
    check_sets(sources, targets)?;
    let t = y.to_tensor();
    Ok(average_gradient(&t, sources).distance(&average_gradient(&t, targets)))
}

/// `| mean_s ||lambda grad R_s(y)||^2 - mean_t ||lambda grad R_t(y)||^2 |`.
pub fn compute_a2(y: &HsiCube, sources: &[RegularizerSpec], targets: &[RegularizerSpec]) -> Result<f64> {
    check_sets(sources, targets)?;
    let t = y.to_tensor();
    Ok((average_sq_norm(&t, sources) - average_sq_norm(&t, targets)).abs())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    pub b_d: f64,
    pub eps: f64,
    pub b_h: f64,
    pub b_l: f64,
    pub l_n: f64,
    pub delta: f64,
    pub m: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub a1_mean: f64,
    pub a2_mean: f64,
    pub u_value: f64,
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
    pub sources: Vec<String>,
    pub targets: Vec<String>,
    pub constants: TheoryConstants,
    pub gaussian_complexity: String,
}

/// `U = mean[8 B_d / (sqrt(M) eps) A1] + mean[2 / (M eps^2) A2]`.
pub fn divergence_u(
    dataset: &[HsiCube],
    sources: &[RegularizerSpec],
    targets: &[RegularizerSpec],
    cfg: &TheoryConfig,
) -> Result<DivergenceReport> {
    cfg.validate()?;
    check_sets(sources, targets)?;
    let first = dataset.first().ok_or_else(|| Error::arg("dataset is empty"))?;
    let m = cfg.m.unwrap_or(first.len());
    if dataset.iter().any(|c| c.len() != m) {
        return Err(Error::arg("every cube must have M elements"));
    }
    let a1 = dataset
        .iter()
        .map(|y| compute_a1(y, sources, targets))
        .collect::<Result<Vec<_>>>()?;
    let a2 = dataset
        .iter()
        .map(|y| compute_a2(y, sources, targets))
        .collect::<Result<Vec<_>>>()?;
    let n = dataset.len() as f64;
    let a1_mean = a1.iter().sum::<f64>() / n;
    let a2_mean = a2.iter().sum::<f64>() / n;
    let mf = m as f64;
    let u_value = 8.0 * cfg.b_d / (mf.sqrt() * cfg.eps) * a1_mean + 2.0 / (mf * cfg.eps * cfg.eps) * a2_mean;
    Ok(DivergenceReport {
        a1_mean,
        a2_mean,
        u_value,
        a1,
        a2,
        sources: sources.iter().map(RegularizerSpec::label).collect(),
        targets: targets.iter().map(RegularizerSpec::label).collect(),
        constants: TheoryConstants {
            b_d: cfg.b_d,
            eps: cfg.eps,
            b_h: cfg.b_h,
            b_l: cfg.loss_bound(),
            l_n: cfg.loss_lipschitz(m),
            delta: cfg.delta,
            m,
        },
        gaussian_complexity: "not computed".to_string(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub max_ratio: f64,
    pub bound: f64,
    pub ratios: Vec<f64>,
    pub skipped: usize,
}

/// Samples weight pairs uniformly in `[eps, B_H]^M`, solves with each, and
/// reports `||f(h1) - f(h2)|| / ||h1 - h2||`.
pub fn lipschitz_probe(
    y: &HsiCube,
    spec: &RegularizerSpec,
    cfg: &TheoryConfig,
    solver: &SolverConfig,
    trials: usize,
    seed: u64,
) -> Result<LipschitzReport> {
    cfg.validate()?;
    if trials == 0 {
        return Err(Error::arg("trials must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w, b) = y.dims();
    let draw = |rng: &mut ChaCha8Rng| {
        let data = (0..y.len()).map(|_| rng.random_range(cfg.eps..=cfg.b_h)).collect();
        HsiCube::new(h, w, b, data)
    };
    let pairs: Vec<(HsiCube, HsiCube)> = (0..trials)
        .map(|_| Ok((draw(&mut rng)?, draw(&mut rng)?)))
        .collect::<Result<_>>()?;
    lipschitz_ratios(y, spec, cfg, solver, &pairs)
}

/// Lipschitz ratios over explicit weight pairs; pairs at distance zero are
/// skipped.
pub fn lipschitz_ratios(
    y: &HsiCube,
    spec: &RegularizerSpec,
    cfg: &TheoryConfig,
    solver: &SolverConfig,
    pairs: &[(HsiCube, HsiCube)],
) -> Result<LipschitzReport> {
    let mut ratios = Vec::with_capacity(pairs.len());
    let mut skipped = 0;
    for (h1, h2) in pairs {
        let dh = h1.to_tensor().distance(&h2.to_tensor());
        if dh == 0.0 {
            skipped += 1;
            continue;
        }
        let x1 = solve(y, h1, spec, solver)?.x_hat;
        let x2 = solve(y, h2, spec, solver)?.x_hat;
        ratios.push(x1.to_tensor().distance(&x2.to_tensor()) / dh);
    }
    Ok(LipschitzReport {
        max_ratio: ratios.iter().copied().fold(0.0, f64::max),
        bound: cfg.lipschitz_bound(),
        ratios,
        skipped,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniquenessReport {
    pub max_distance: f64,
    pub n_inits: usize,
    pub all_converged: bool,
    pub iterations: Vec<usize>,
}

/// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
pub fn relative_distance(a: &HsiCube, b: &HsiCube) -> f64 {
    let (ta, tb) = (a.to_tensor(), b.to_tensor());
    let scale = ta.norm().max(tb.norm());
    if scale == 0.0 {
        0.0
    } else {
        ta.distance(&tb) / scale
    }
}

/// Solves from `n_inits` random starts in `[0, 1]^M` with weights floored
/// at `eps` and reports the largest pairwise relative distance.
pub fn uniqueness_probe(
    y: &HsiCube,
    w: &HsiCube,
    spec: &RegularizerSpec,
    solver: &SolverConfig,
    eps: f64,
    n_inits: usize,
    seed: u64,
) -> Result<UniquenessReport> {
    if n_inits == 0 {
        return Err(Error::arg("n_inits must be at least 1"));
    }
    let w = floored(w, eps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, wd, b) = y.dims();
    let mut sols = Vec::with_capacity(n_inits);
    let mut iterations = Vec::with_capacity(n_inits);
    let mut all_converged = true;
    for _ in 0..n_inits {
        let x0 = HsiCube::new(h, wd, b, (0..y.len()).map(|_| rng.random::<f64>()).collect())?;
        let r = solve_from(y, &w, spec, solver, &x0)?;
        all_converged &= r.converged;
        iterations.push(r.iterations);
        sols.push(r.x_hat);
    }
    let mut max_distance: f64 = 0.0;
    for i in 0..sols.len() {
        for j in i + 1..sols.len() {
            max_distance = max_distance.max(relative_distance(&sols[i], &sols[j]));
        }
    }
    Ok(UniquenessReport {
        max_distance,
        n_inits,
        all_converged,
        iterations,
    })
}

/// `6 B_l / T * sqrt(sum_t 1 / N_t) * sqrt(log(2 / delta) / 2)`.
pub fn sample_complexity_term(t: usize, n: &[usize], b_l: f64, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::arg(format!("delta {delta} outside (0, 1)")));
    }
    if t == 0 || n.is_empty() || n.contains(&0) {
        return Err(Error::arg("need T >= 1 and every N_t >= 1"));
    }
    let inv: f64 = n.iter().map(|&k| 1.0 / k as f64).sum();
    Ok(6.0 * b_l / t as f64 * inv.sqrt() * ((2.0 / delta).ln() / 2.0).sqrt())
}
