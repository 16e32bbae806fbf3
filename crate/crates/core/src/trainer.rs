//! Bi-level training of the hyper-weight network.
//!
//! For each noisy/clean pair the network predicts `W = h(Y)`; every source
//! model is solved by `K` unrolled ADMM iterations with that `W`; the upper
//! loss is the MSE to the clean cube, averaged over source models and over
//! the batch. Gradients flow back through the unrolled solves into the
//! network parameters, which Adam then updates.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::admm::{check_tape_budget, unroll_on, SolverConfig, DEFAULT_MU};
use crate::autodiff::{Backend, Eager, Tape, Tensor};
use crate::cube::{HsiCube, PatchPair};
use crate::error::{Error, Result};
use crate::hwnet::{check_receptive_field, forward_on, HwnetParams, DEFAULT_CHANNELS};
use crate::metrics::psnr;
use crate::regularizer::{RegularizerSpec, TRAINING_TV_INNER_ITERS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub source_models: Vec<RegularizerSpec>,
    pub epochs: usize,
    pub lr: f64,
    /// Multiplicative learning-rate decay applied once per epoch.
    pub lr_decay: f64,
    pub batch_size: usize,
    pub unroll_k: usize,
    pub mu: f64,
    pub prox_inner_iters: usize,
    pub channels: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Share of pairs held out for model selection. With too few pairs to
    /// split, the training pairs double as the validation set.
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            source_models: vec![RegularizerSpec::nuclear(crate::regularizer::DEFAULT_LAMBDA_NUCLEAR)],
            epochs: 10,
            lr: 1e-3,
            lr_decay: 0.8,
            batch_size: 10,
            unroll_k: 10,
            mu: DEFAULT_MU,
            prox_inner_iters: TRAINING_TV_INNER_ITERS,
            channels: DEFAULT_CHANNELS,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            validation_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.source_models.is_empty() {
            return Err(Error::arg("at least one source model is required"));
        }
        for s in &self.source_models {
            s.validate()?;
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::arg("lr must be non-negative"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::arg("lr_decay must lie in (0, 1]"));
        }
        if self.batch_size == 0 {
            return Err(Error::arg("batch_size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::arg("validation_fraction must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::arg("invalid Adam constants"));
        }
        self.solver().validate()
    }

    /// Lower-level solver settings used inside training.
    pub fn solver(&self) -> SolverConfig {
        SolverConfig {
            mu: self.mu,
            unroll_k: self.unroll_k,
            prox_inner_iters: self.prox_inner_iters,
            ..SolverConfig::default()
        }
    }
}

/// Mean squared error between the estimate and the clean cube.
pub fn upper_loss(x_hat: &HsiCube, x_bar: &HsiCube) -> Result<f64> {
    x_hat.require_same_shape(x_bar, "clean cube")?;
    Ok(crate::autodiff::kernels::mse(&x_hat.to_tensor(), &x_bar.to_tensor()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamState {
    pub fn new(params: &HwnetParams) -> Self {
        let n = params.param_count();
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(
    params: &HwnetParams,
    grads: &HwnetParams,
    state: &mut AdamState,
    lr: f64,
    cfg: AdamConfig,
) -> Result<HwnetParams> {
    let theta = params.flat();
    let g = grads.flat();
    if g.len() != theta.len() || state.m.len() != theta.len() {
        return Err(Error::arg("parameter, gradient and state sizes differ"));
    }
    state.t += 1;
    let c1 = 1.0 - cfg.beta1.powi(state.t);
    let c2 = 1.0 - cfg.beta2.powi(state.t);
    let mut out = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g[i];
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        out.push(theta[i] - lr * m_hat / (v_hat.sqrt() + cfg.eps));
    }
    params.from_flat(&out)
}

fn param_values(params: &HwnetParams) -> Vec<(Tensor, Tensor)> {
    params
        .blocks()
        .iter()
        .map(|b| (b.kernel.clone(), b.bias.clone()))
        .collect()
}

/// Network plus unrolled solves for one pair; returns the averaged loss and
/// the per-model losses.
fn sample_forward<B: Backend>(
    b: &mut B,
    blocks: &[(B::Value, B::Value)],
    pair: &PatchPair,
    specs: &[RegularizerSpec],
    solver: &SolverConfig,
) -> (B::Value, Vec<B::Value>) {
    let y = b.constant(pair.noisy.to_tensor());
    let clean = b.constant(pair.clean.to_tensor());
    let w = forward_on(b, blocks, &y);
    let per_model: Vec<B::Value> = specs
        .iter()
        .map(|spec| {
            let x = unroll_on(b, &y, &w, spec, solver);
            b.mse(&x, &clean)
        })
        .collect();
    let mut total = per_model[0].clone();
    for l in &per_model[1..] {
        total = b.add(&total, l);
    }
    let total = b.scale(&total, 1.0 / specs.len() as f64);
    (total, per_model)
}

/// Upper-level loss of one pair at `params`, without recording.
pub fn sample_loss(params: &HwnetParams, pair: &PatchPair, cfg: &TrainConfig) -> Result<f64> {
    let blocks = param_values(params);
    let (total, _) = sample_forward(&mut Eager, &blocks, pair, &cfg.source_models, &cfg.solver());
    Ok(total.item())
}

/// Loss, per-model losses and parameter gradient for one pair.
pub fn sample_gradient(
    params: &HwnetParams,
    pair: &PatchPair,
    cfg: &TrainConfig,
) -> Result<(f64, Vec<f64>, HwnetParams)> {
    let mut tape = Tape::new();
    let vars = params.on_tape(&mut tape);
    let (total, per_model) = sample_forward(&mut tape, &vars, pair, &cfg.source_models, &cfg.solver());
    let grads = tape.backward_scalar(total)?;
    let losses = per_model.iter().map(|&v| tape.get(v).item()).collect();
    Ok((tape.get(total).item(), losses, params.gradients_from(&vars, &grads)))
}

/// Mean loss, mean per-model losses and mean gradient over `batch`.
///
/// Samples are processed in parallel; the reduction runs in batch order so
/// the result does not depend on the thread count.
pub fn batch_gradient(
    params: &HwnetParams,
    batch: &[&PatchPair],
    cfg: &TrainConfig,
) -> Result<(f64, Vec<f64>, HwnetParams)> {
    if batch.is_empty() {
        return Err(Error::arg("empty batch"));
    }
    let results: Vec<(f64, Vec<f64>, HwnetParams)> = batch
        .par_iter()
        .map(|p| sample_gradient(params, p, cfg))
        .collect::<Result<_>>()?;
    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut per_model = vec![0.0; cfg.source_models.len()];
    let mut acc = vec![0.0; params.param_count()];
    for (l, pm, g) in &results {
        loss += l;
        for (a, v) in per_model.iter_mut().zip(pm) {
            *a += v;
        }
        for (a, v) in acc.iter_mut().zip(g.flat()) {
            *a += v;
        }
    }
    per_model.iter_mut().for_each(|v| *v /= n);
    acc.iter_mut().for_each(|v| *v /= n);
    Ok((loss / n, per_model, params.from_flat(&acc)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    /// Mean loss of each source model's lower-level solve over the batch.
    pub model_losses: Vec<f64>,
    pub batch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelScore {
    pub model: String,
    pub psnr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 0 is the untrained network.
    pub epoch: usize,
    pub validation_loss: f64,
    pub validation_psnr: Vec<ModelScore>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub train_size: usize,
    pub validation_size: usize,
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

fn validate_dataset(dataset: &[PatchPair]) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::arg("training set is empty"));
    }
    for p in dataset {
        p.noisy.require_same_shape(&p.clean, "clean cube")?;
        check_receptive_field(&p.noisy)?;
    }
    Ok(())
}

fn split(n: usize, cfg: &TrainConfig) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    idx.shuffle(&mut rng);
    let n_val = (cfg.validation_fraction * n as f64).round() as usize;
    if n_val == 0 || n_val >= n {
        return (idx.clone(), idx);
    }
    let val = idx[..n_val].to_vec();
    let train = idx[n_val..].to_vec();
    (train, val)
}

fn evaluate(params: &HwnetParams, data: &[&PatchPair], cfg: &TrainConfig, epoch: usize) -> Result<EpochRecord> {
    let blocks = param_values(params);
    let solver = cfg.solver();
    let rows: Vec<(f64, Vec<f64>)> = data
        .par_iter()
        .map(|p| {
            let b = &mut Eager;
            let y = p.noisy.to_tensor();
            let w = forward_on(b, &blocks, &y);
            let mut loss = 0.0;
            let mut scores = Vec::with_capacity(cfg.source_models.len());
            for spec in &cfg.source_models {
                let x = HsiCube::from_tensor(&unroll_on(b, &y, &w, spec, &solver))?;
                loss += upper_loss(&x, &p.clean)?;
                scores.push(psnr(&p.clean, &x, 1.0)?);
            }
            Ok((loss / cfg.source_models.len() as f64, scores))
        })
        .collect::<Result<_>>()?;
    let n = rows.len() as f64;
    let validation_loss = rows.iter().map(|r| r.0).sum::<f64>() / n;
    let validation_psnr = cfg
        .source_models
        .iter()
        .enumerate()
        .map(|(t, spec)| ModelScore {
            model: spec.label(),
            psnr: rows.iter().map(|r| r.1[t]).sum::<f64>() / n,
        })
        .collect();
    if !validation_loss.is_finite() {
        return Err(Error::Evaluation(format!("validation loss at epoch {epoch}")));
    }
    Ok(EpochRecord {
        epoch,
        validation_loss,
        validation_psnr,
    })
}

/// Trains from a fresh initialization seeded by `cfg.seed` and returns the
/// parameters with the lowest validation loss, the untrained network
/// included.
pub fn train(dataset: &[PatchPair], cfg: &TrainConfig) -> Result<(HwnetParams, TrainLog)> {
    let init = HwnetParams::init(cfg.channels, cfg.seed)?;
    train_from(dataset, cfg, init)
}

/// [`train`] starting from given parameters.
pub fn train_from(dataset: &[PatchPair], cfg: &TrainConfig, init: HwnetParams) -> Result<(HwnetParams, TrainLog)> {
    let started = Instant::now();
    cfg.validate()?;
    validate_dataset(dataset)?;
    for spec in &cfg.source_models {
        check_tape_budget(&dataset[0].noisy, spec, &cfg.solver())?;
    }
    let (train_idx, val_idx) = split(dataset.len(), cfg);
    let val: Vec<&PatchPair> = val_idx.iter().map(|&i| &dataset[i]).collect();
    let adam = AdamConfig {
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        eps: cfg.adam_eps,
    };

    let mut params = init;
    let mut state = AdamState::new(&params);
    let mut log = TrainLog {
        train_size: train_idx.len(),
        validation_size: val.len(),
        ..TrainLog::default()
    };
    let first = evaluate(&params, &val, cfg, 0)?;
    let mut best = (first.validation_loss, params.clone());
    log.epochs.push(first);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let mut order = train_idx;
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        let lr = cfg.lr * cfg.lr_decay.powi(epoch as i32 - 1);
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&PatchPair> = chunk.iter().map(|&i| &dataset[i]).collect();
            let (loss, model_losses, grads) = batch_gradient(&params, &batch, cfg)?;
            step += 1;
            let next = if loss.is_finite() && grads.is_finite() {
                adam_step(&params, &grads, &mut state, lr, adam)?
            } else {
                params.map(|_| f64::NAN)
            };
            if !next.is_storable() {
                return Err(Error::TrainingDiverged {
                    step,
                    checkpoint: Box::new(params),
                });
            }
            params = next;
            log.steps.push(StepRecord {
                epoch,
                step,
                lr,
                loss,
                model_losses,
                batch: batch.len(),
            });
        }
        let rec = evaluate(&params, &val, cfg, epoch)?;
        if rec.validation_loss < best.0 {
            best = (rec.validation_loss, params.clone());
            log.best_epoch = epoch;
        }
        log.epochs.push(rec);
    }
    log.wall_clock_secs = started.elapsed().as_secs_f64();
    Ok((best.1, log))
}
