//! Finite-difference check of every differentiable operation the solver and
//! network use, packaged as a single report.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::admm::{unroll_on, SolverConfig};
use crate::autodiff::{grad_check_with, Axis, Backend, Tape, Tensor, Var};
use crate::error::Result;
use crate::hwnet::{forward_on, HwnetParams};
use crate::regularizer::RegularizerSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub seed: u64,
    /// Coordinates probed per operation.
    pub probes: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Corrupts the SVT adjoint so the suite can be shown to fail.
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    #[doc(hidden)]
    pub inject_svt_fault: bool,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            probes: 20,
            step: 1e-5,
            tolerance: 1e-4,
            inject_svt_fault: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpCheck {
    pub op: String,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub checks: Vec<OpCheck>,
    pub tolerance: f64,
    pub passed: bool,
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape matches data")
}

/// Scalar probe `sum(c * f(x))` with a fixed random cotangent `c`.
fn contract(tape: &mut Tape, v: &Var, c: &Tensor) -> Var {
    let cv = tape.constant(c.clone());
    let p = tape.mul(v, &cv);
    tape.sum(&p)
}

pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut template = Tape::new();
    if cfg.inject_svt_fault {
        template.inject_svt_backward_fault();
    }
    let mut checks = Vec::new();
    let mut record = |op: &str, err: f64| {
        checks.push(OpCheck {
            op: op.to_string(),
            max_rel_error: err,
            passed: err < cfg.tolerance,
        });
    };
    let run = |f: &dyn Fn(&mut Tape, Var) -> Var, x: &Tensor, seed: u64| {
        grad_check_with(&template, f, x, cfg.probes, cfg.step, seed)
    };

    let shape = [1, 4, 5, 3];
    let c = uniform(&shape, -1.0, 1.0, &mut rng);
    let other = uniform(&shape, 0.5, 1.5, &mut rng);

    let x = uniform(&shape, 0.2, 1.0, &mut rng);
    let err = run(
        &|t, v| {
            let o = t.constant(other.clone());
            let a = t.mul(&v, &o);
            let a = t.div(&a, &o);
            let a = t.square(&a);
            let a = t.offset(&a, 0.3);
            let a = t.scale(&a, 1.7);
            let a = t.sub(&a, &o);
            let a = t.add(&a, &v);
            contract(t, &a, &c)
        },
        &x,
        rng.random(),
    )?;
    record("elementwise", err);

    // clamp and relu are probed away from their kinks
    let x = uniform(&shape, -1.0, 1.0, &mut rng).map(|v| v + 0.1 * v.signum());
    let err = run(
        &|t, v| {
            let r = t.relu(&v);
            let k = t.clamp(&v, -2.0, 2.0);
            let s = t.add(&r, &k);
            contract(t, &s, &c)
        },
        &x,
        rng.random(),
    )?;
    record("relu_clamp", err);

    let x = uniform(&shape, -1.0, 1.0, &mut rng);
    for (name, axis) in [("diff_height", Axis::Height), ("diff_width", Axis::Width), ("diff_band", Axis::Band)] {
        let err = run(
            &|t, v| {
                let d = t.diff(&v, axis);
                let a = t.diff_adjoint(&d, axis);
                contract(t, &a, &c)
            },
            &x,
            rng.random(),
        )?;
        record(name, err);
    }

    let m = uniform(&[1, 6, 1, 4], -1.0, 1.0, &mut rng);
    let cm = uniform(&[1, 6, 1, 4], -1.0, 1.0, &mut rng);
    let err = run(
        &|t, v| {
            let s = t.svt(&v, 6, 4, 0.3);
            contract(t, &s, &cm)
        },
        &m,
        rng.random(),
    )?;
    record("svt", err);

    let kernel = uniform(&[2, 1, 3, 3, 3], -0.5, 0.5, &mut rng);
    let bias = uniform(&[2], -0.5, 0.5, &mut rng);
    let c2 = uniform(&[2, 4, 5, 3], -1.0, 1.0, &mut rng);
    let err = run(
        &|t, v| {
            let k = t.constant(kernel.clone());
            let b = t.constant(bias.clone());
            let y = t.conv3d(&v, &k);
            let y = t.channel_bias(&y, &b);
            contract(t, &y, &c2)
        },
        &x,
        rng.random(),
    )?;
    record("conv3d_input", err);
    let input = x.clone();
    let err = run(
        &|t, k| {
            let xi = t.constant(input.clone());
            let y = t.conv3d(&xi, &k);
            contract(t, &y, &c2)
        },
        &kernel,
        rng.random(),
    )?;
    record("conv3d_kernel", err);

    let err = run(
        &|t, v| {
            let s = t.softmax_scaled(&v);
            contract(t, &s, &c)
        },
        &x,
        rng.random(),
    )?;
    record("softmax_scaled", err);

    let err = run(
        &|t, v| {
            let o = t.constant(other.clone());
            t.mse(&v, &o)
        },
        &x,
        rng.random(),
    )?;
    record("mse", err);

    // unrolled solves, differentiated with respect to the weight map
    let y = uniform(&[1, 8, 8, 4], 0.0, 1.0, &mut rng);
    let w = uniform(&[1, 8, 8, 4], 0.5, 1.5, &mut rng);
    let cy = uniform(&[1, 8, 8, 4], -1.0, 1.0, &mut rng);
    for (name, spec, k) in [
        ("admm_nuclear", RegularizerSpec::nuclear(0.5), 5),
        ("admm_spatial_tv", RegularizerSpec::spatial_tv(0.05), 3),
        ("admm_spectral_tv", RegularizerSpec::spectral_tv(0.05), 3),
    ] {
        let solver = SolverConfig {
            unroll_k: k,
            ..SolverConfig::default()
        };
        let err = run(
            &|t, wv| {
                let yv = t.constant(y.clone());
                let x = unroll_on(t, &yv, &wv, &spec, &solver);
                contract(t, &x, &cy)
            },
            &w,
            rng.random(),
        )?;
        record(name, err);
    }

    // small network, input gradient; biases are nonzero so ReLUs sit off their kinks
    let params = HwnetParams::init(2, cfg.seed)?;
    let blocks: Vec<(Tensor, Tensor)> = params
        .blocks()
        .iter()
        .map(|b| {
            let shape = b.bias.shape().to_vec();
            (b.kernel.clone(), uniform(&shape, -0.1, 0.1, &mut rng))
        })
        .collect();
    let yn = uniform(&[1, 5, 5, 4], 0.0, 1.0, &mut rng);
    let cn = uniform(&[1, 5, 5, 4], -1.0, 1.0, &mut rng);
    let err = run(
        &|t, v| {
            let vars: Vec<(Var, Var)> = blocks
                .iter()
                .map(|(k, b)| (t.constant(k.clone()), t.constant(b.clone())))
                .collect();
            let w = forward_on(t, &vars, &v);
            contract(t, &w, &cn)
        },
        &yn,
        rng.random(),
    )?;
    record("hwnet", err);

    let passed = checks.iter().all(|c| c.passed);
    Ok(GradcheckReport {
        checks,
        tolerance: cfg.tolerance,
        passed,
    })
}
