use std::io::Write;
use std::path::{Path, PathBuf};

use hwprox_core::trainer::{train_from, EpochRecord, StepRecord};
use hwprox_core::{load_params, save_params, DatasetManifest, Error as CoreError, HwnetParams, TrainConfig, TrainLog};
use serde::{Deserialize, Serialize};

use super::{Context, Models};
use crate::error::{CliError, Result};
use crate::io;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainJob {
    pub manifest: PathBuf,
    /// Replaces `trainer.source_models` when given.
    #[serde(default)]
    pub sources: Option<Models>,
    #[serde(default)]
    pub trainer: TrainConfig,
    /// Start from saved weights instead of a fresh initialization.
    #[serde(default)]
    pub init_weights: Option<PathBuf>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum LogLine<'a> {
    Step(&'a StepRecord),
    Epoch(&'a EpochRecord),
}

#[derive(Serialize)]
struct Summary<'a> {
    best_epoch: usize,
    train_size: usize,
    validation_size: usize,
    param_count: usize,
    sources: Vec<String>,
    config: &'a TrainConfig,
}

fn write_log(path: &Path, log: &TrainLog) -> Result<()> {
    let mut buf = Vec::new();
    let mut epochs = log.epochs.iter().peekable();
    // epoch 0 first, then each epoch's steps followed by its evaluation
    if let Some(e) = epochs.next_if(|e| e.epoch == 0) {
        writeln!(buf, "{}", serde_json::to_string(&LogLine::Epoch(e)).map_err(CoreError::from)?).unwrap();
    }
    for s in &log.steps {
        while let Some(e) = epochs.next_if(|e| e.epoch < s.epoch) {
            writeln!(buf, "{}", serde_json::to_string(&LogLine::Epoch(e)).map_err(CoreError::from)?).unwrap();
        }
        writeln!(buf, "{}", serde_json::to_string(&LogLine::Step(s)).map_err(CoreError::from)?).unwrap();
    }
    for e in epochs {
        writeln!(buf, "{}", serde_json::to_string(&LogLine::Epoch(e)).map_err(CoreError::from)?).unwrap();
    }
    io::write_bytes(path, &buf)
}

pub fn run(ctx: &Context) -> Result<()> {
    let config = ctx.config()?;
    let mut job: TrainJob = io::read_config(config)?;
    if let Some(seed) = io::seed_override(ctx.seed)? {
        job.trainer.seed = seed;
    }
    if let Some(m) = &job.sources {
        job.trainer.source_models = m.list()?;
    }
    job.trainer.validate()?;
    let out = io::output_dir(config, job.output_dir.as_ref(), ctx.out.as_ref())?;
    io::require(&job.manifest)?;
    let pairs = DatasetManifest::load(&job.manifest)?.load_pairs()?;
    let init = match &job.init_weights {
        Some(p) => {
            io::require(p)?;
            load_params(p)?
        }
        None => HwnetParams::init(job.trainer.channels, job.trainer.seed)?,
    };
    io::ensure_dir(&out)?;

    let (params, log) = match train_from(&pairs, &job.trainer, init) {
        Ok(r) => r,
        Err(CoreError::TrainingDiverged { step, checkpoint }) => {
            let path = out.join("checkpoint.hwn");
            save_params(&checkpoint, &path)?;
            return Err(CliError::Numerical(format!(
                "training diverged at step {step}; last finite parameters saved to {}",
                path.display()
            )));
        }
        Err(e) => return Err(e.into()),
    };
    save_params(&params, out.join("weights.hwn"))?;
    write_log(&out.join("train_log.jsonl"), &log)?;
    io::write_json(
        &out.join("train_summary.json"),
        &Summary {
            best_epoch: log.best_epoch,
            train_size: log.train_size,
            validation_size: log.validation_size,
            param_count: params.param_count(),
            sources: job.trainer.source_models.iter().map(|s| s.label()).collect(),
            config: &job.trainer,
        },
    )?;
    eprintln!(
        "trained {} steps in {:.1}s, best epoch {}",
        log.steps.len(),
        log.wall_clock_secs,
        log.best_epoch
    );
    Ok(())
}
