use std::path::PathBuf;

use hwprox_core::theory::{divergence_u, lipschitz_probe, uniqueness_probe, LipschitzReport, UniquenessReport};
use hwprox_core::{DatasetManifest, DivergenceReport, HsiCube, SolverConfig, TheoryConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Context, Models, Target};
use crate::error::{CliError, Result};
use crate::io;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryJob {
    /// Observed cubes the divergences are averaged over.
    #[serde(default)]
    pub inputs: Vec<PathBuf>,
    /// Adds every noisy cube of a manifest to `inputs`.
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    pub sources: Models,
    pub targets: Models,
    #[serde(default)]
    pub theory: TheoryConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    /// Probes run on the first input cube.
    #[serde(default)]
    pub lipschitz: Option<LipschitzJob>,
    #[serde(default)]
    pub uniqueness: Option<UniquenessJob>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LipschitzJob {
    pub model: Target,
    pub trials: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniquenessJob {
    pub model: Target,
    pub n_inits: usize,
}

#[derive(Serialize)]
struct Report {
    seed: u64,
    inputs: usize,
    divergence: DivergenceReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    lipschitz: Option<LipschitzReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    uniqueness: Option<UniquenessReport>,
}

pub fn run(ctx: &Context) -> Result<()> {
    let config = ctx.config()?;
    let mut job: TheoryJob = io::read_config(config)?;
    if let Some(seed) = io::seed_override(ctx.seed)? {
        job.seed = seed;
    }
    let sources = job.sources.list()?;
    let targets = job.targets.list()?;
    job.theory.validate()?;
    job.solver.validate()?;
    let out = io::output_dir(config, job.output_dir.as_ref(), ctx.out.as_ref())?;

    let mut cubes: Vec<HsiCube> = job.inputs.iter().map(|p| io::cube(p)).collect::<Result<_>>()?;
    if let Some(m) = &job.manifest {
        io::require(m)?;
        cubes.extend(DatasetManifest::load(m)?.load_pairs()?.into_iter().map(|p| p.noisy));
    }
    if cubes.is_empty() {
        return Err(CliError::Invalid("theory needs inputs or a manifest".into()));
    }

    let divergence = divergence_u(&cubes, &sources, &targets, &job.theory)?;
    let y = &cubes[0];
    let lipschitz = job
        .lipschitz
        .as_ref()
        .map(|l| -> Result<LipschitzReport> {
            Ok(lipschitz_probe(y, &l.model.spec()?, &job.theory, &job.solver, l.trials, job.seed)?)
        })
        .transpose()?;
    let uniqueness = job
        .uniqueness
        .as_ref()
        .map(|u| -> Result<UniquenessReport> {
            let (h, w, b) = y.dims();
            let mut rng = ChaCha8Rng::seed_from_u64(job.seed);
            let (lo, hi) = (job.theory.eps, job.theory.b_h);
            let weights = HsiCube::new(h, w, b, (0..h * w * b).map(|_| rng.random_range(lo..=hi)).collect())?;
            Ok(uniqueness_probe(y, &weights, &u.model.spec()?, &job.solver, lo, u.n_inits, job.seed)?)
        })
        .transpose()?;

    io::ensure_dir(&out)?;
    io::write_json(
        &out.join("theory_report.json"),
        &Report {
            seed: job.seed,
            inputs: cubes.len(),
            divergence,
            lipschitz,
            uniqueness,
        },
    )?;
    Ok(())
}
