use std::path::PathBuf;

use hwprox_core::admm::SolveReport;
use hwprox_core::cube::encode_cube;
use hwprox_core::metrics::{evaluate, write_csv};
use hwprox_core::{hwnet_forward, load_params, solve, DatasetManifest, HsiCube, HwnetParams, MetricsReport, SolverConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Context, Target};
use crate::error::{CliError, Result};
use crate::io;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiseJob {
    /// A single noisy cube; exclusive with `manifest`.
    #[serde(default)]
    pub input: Option<PathBuf>,
    /// Clean reference for `input`, enabling metrics.
    #[serde(default)]
    pub clean: Option<PathBuf>,
    /// Every noisy/clean pair listed, with metrics.
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    /// Trained network; required unless `--uniform-weight` is passed.
    #[serde(default)]
    pub weights: Option<PathBuf>,
    pub target: Target,
    #[serde(default)]
    pub solver: SolverConfig,
    /// Also write the predicted weight map.
    #[serde(default)]
    pub save_weight_map: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

struct Item {
    id: String,
    noisy: HsiCube,
    clean: Option<HsiCube>,
}

#[derive(Serialize)]
struct ItemReport {
    id: String,
    target: String,
    uniform_weight: bool,
    seed: u64,
    solve: SolveReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    metrics: Option<MetricsReport>,
}

fn items(job: &DenoiseJob) -> Result<Vec<Item>> {
    match (&job.input, &job.manifest) {
        (Some(input), None) => Ok(vec![Item {
            id: io::stem(input),
            noisy: io::cube(input)?,
            clean: job.clean.as_deref().map(io::cube).transpose()?,
        }]),
        (None, Some(m)) => {
            if job.clean.is_some() {
                return Err(CliError::Invalid("clean is only used with input".into()));
            }
            io::require(m)?;
            Ok(DatasetManifest::load(m)?
                .load_pairs()?
                .into_iter()
                .map(|p| Item {
                    id: p.id,
                    noisy: p.noisy,
                    clean: Some(p.clean),
                })
                .collect())
        }
        _ => Err(CliError::Invalid("give exactly one of input and manifest".into())),
    }
}

pub fn run(ctx: &Context, uniform_weight: bool) -> Result<()> {
    let config = ctx.config()?;
    let mut job: DenoiseJob = io::read_config(config)?;
    if let Some(seed) = io::seed_override(ctx.seed)? {
        job.seed = seed;
    }
    let spec = job.target.spec()?;
    job.solver.validate()?;
    let out = io::output_dir(config, job.output_dir.as_ref(), ctx.out.as_ref())?;
    let params: Option<HwnetParams> = match (&job.weights, uniform_weight) {
        (_, true) => None,
        (Some(p), false) => {
            io::require(p)?;
            Some(load_params(p)?)
        }
        (None, false) => {
            return Err(CliError::Invalid(
                "weights are required unless --uniform-weight is given".into(),
            ))
        }
    };
    let items = items(&job)?;
    io::ensure_dir(&out)?;

    type Outcome = (HsiCube, Option<HsiCube>, ItemReport);
    let results: Vec<Outcome> = items
        .par_iter()
        .map(|it| -> Result<Outcome> {
            let (h, w, b) = it.noisy.dims();
            let weights = match &params {
                Some(p) => hwnet_forward(p, &it.noisy)?,
                None => HsiCube::filled(h, w, b, 1.0)?,
            };
            let res = solve(&it.noisy, &weights, &spec, &job.solver)?;
            if !res.x_hat.data().iter().all(|v| v.is_finite()) {
                return Err(CliError::Numerical(format!("non-finite estimate for {}", it.id)));
            }
            let metrics = it.clean.as_ref().map(|c| evaluate(c, &res.x_hat)).transpose()?;
            let report = ItemReport {
                id: it.id.clone(),
                target: spec.label(),
                uniform_weight,
                seed: job.seed,
                solve: res.report(),
                metrics,
            };
            Ok((res.x_hat, params.is_some().then_some(weights), report))
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for (x, w, report) in &results {
        let id = &report.id;
        io::write_bytes(&out.join(format!("{id}_restored.hwc")), &encode_cube(x)?)?;
        if let (true, Some(w)) = (job.save_weight_map, w) {
            io::write_bytes(&out.join(format!("{id}_weights.hwc")), &encode_cube(w)?)?;
        }
        io::write_json(&out.join(format!("{id}_report.json")), report)?;
        if let Some(m) = report.metrics {
            rows.push((id.clone(), m));
        }
    }
    if !rows.is_empty() {
        let mut csv = Vec::new();
        write_csv(&mut csv, &rows)?;
        io::write_bytes(&out.join("metrics.csv"), &csv)?;
        let n = rows.len() as f64;
        let mean = MetricsReport {
            psnr: rows.iter().map(|r| r.1.psnr).sum::<f64>() / n,
            ssim: rows.iter().map(|r| r.1.ssim).sum::<f64>() / n,
            sam: rows.iter().map(|r| r.1.sam).sum::<f64>() / n,
            ergas: rows.iter().map(|r| r.1.ergas).sum::<f64>() / n,
        };
        io::write_json(&out.join("metrics_mean.json"), &mean)?;
        eprintln!("mean PSNR {:.2} dB over {} cubes", mean.psnr, rows.len());
    }
    Ok(())
}
