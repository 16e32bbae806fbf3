use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Relative-error denominator floor.
pub const DENOMINATOR_FLOOR: f64 = 1e-8;

fn evaluate<F>(f: &F, x: &Tensor) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Var,
{
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let out = f(&mut tape, xv);
    let value = tape.get(out);
    if value.len() != 1 {
        return Err(Error::arg(format!(
            "gradient check needs a scalar function, got shape {:?}",
            value.shape()
        )));
    }
    let v = value.item();
    if !v.is_finite() {
        return Err(Error::Evaluation(format!("f(x) = {v}")));
    }
    Ok(v)
}

/// Compares the taped gradient of a scalar function against central
/// differences at `n_probes` randomly chosen coordinates of `x` and returns
/// the largest relative error.
pub fn grad_check<F>(f: F, x: &Tensor, n_probes: usize, step: f64, seed: u64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Var,
{
    grad_check_with(&Tape::new(), f, x, n_probes, step, seed)
}

/// [`grad_check`] with the analytic pass recorded on a copy of `template`,
/// which carries tape settings such as the SVD regularizer.
pub fn grad_check_with<F>(template: &Tape, f: F, x: &Tensor, n_probes: usize, step: f64, seed: u64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Var,
{
    let mut tape = template.clone();
    let xv = tape.leaf(x.clone());
    let out = f(&mut tape, xv);
    let value = tape.get(out);
    if value.len() != 1 {
        return Err(Error::arg(format!(
            "gradient check needs a scalar function, got shape {:?}",
            value.shape()
        )));
    }
    if !value.item().is_finite() {
        return Err(Error::Evaluation(format!("f(x) = {}", value.item())));
    }
    let grads = tape.backward_scalar(out)?;
    let analytic = grads.get_or_zeros(xv, x.shape());

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = x.len();
    let coords = sample(&mut rng, n, n_probes.min(n)).into_vec();

    let mut worst: f64 = 0.0;
    for idx in coords {
        let mut plus = x.clone();
        plus.data_mut()[idx] += step;
        let mut minus = x.clone();
        minus.data_mut()[idx] -= step;
        let fd = (evaluate(&f, &plus)? - evaluate(&f, &minus)?) / (2.0 * step);
        let a = analytic.data()[idx];
        let denom = a.abs().max(fd.abs()).max(DENOMINATOR_FLOOR);
        worst = worst.max((a - fd).abs() / denom);
    }
    Ok(worst)
}
