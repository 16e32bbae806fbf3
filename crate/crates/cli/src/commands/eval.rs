use std::path::PathBuf;

use hwprox_core::metrics::{evaluate, write_csv};
use hwprox_core::MetricsReport;
use serde::{Deserialize, Serialize};

use super::Context;
use crate::error::{CliError, Result};
use crate::io;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalJob {
    pub pairs: Vec<EvalPair>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalPair {
    /// Defaults to the estimate's file stem.
    #[serde(default)]
    pub id: Option<String>,
    pub reference: PathBuf,
    pub estimate: PathBuf,
}

#[derive(Serialize)]
struct Row<'a> {
    id: &'a str,
    #[serde(flatten)]
    metrics: MetricsReport,
}

pub fn run(ctx: &Context) -> Result<()> {
    let config = ctx.config()?;
    let mut job: EvalJob = io::read_config(config)?;
    if let Some(seed) = io::seed_override(ctx.seed)? {
        job.seed = seed;
    }
    if job.pairs.is_empty() {
        return Err(CliError::Invalid("no pairs to evaluate".into()));
    }
    let out = io::output_dir(config, job.output_dir.as_ref(), ctx.out.as_ref())?;
    let mut rows = Vec::with_capacity(job.pairs.len());
    for p in &job.pairs {
        let reference = io::cube(&p.reference)?;
        let estimate = io::cube(&p.estimate)?;
        let id = p.id.clone().unwrap_or_else(|| io::stem(&p.estimate));
        rows.push((id, evaluate(&reference, &estimate)?));
    }
    io::ensure_dir(&out)?;
    let mut csv = Vec::new();
    write_csv(&mut csv, &rows)?;
    io::write_bytes(&out.join("metrics.csv"), &csv)?;
    let json: Vec<Row> = rows
        .iter()
        .map(|(id, m)| Row { id, metrics: *m })
        .collect();
    io::write_json(&out.join("metrics.json"), &json)?;
    Ok(())
}
