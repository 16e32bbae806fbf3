use std::path::PathBuf;

use hwprox_core::cube::encode_cube;
use hwprox_core::synthetic::{synthetic_scene, SceneParams};
use hwprox_core::{
    augment, extract_patches, normalize, synth_noise, Augment, DatasetManifest, HsiCube, ManifestEntry, NoiseCase,
    NoiseSpec, NoiseTag,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Context;
use crate::error::{CliError, Result};
use crate::io;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthJob {
    /// Clean cube files to corrupt.
    #[serde(default)]
    pub clean: Vec<PathBuf>,
    /// Min-max rescale the clean files to `[0, 1]` first.
    #[serde(default)]
    pub normalize: bool,
    /// Procedurally generated clean scenes, added after the files.
    #[serde(default)]
    pub scenes: Option<Scenes>,
    #[serde(default)]
    pub patch: Option<Patching>,
    pub noise: NoiseSpec,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenes {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Patching {
    pub size: (usize, usize),
    pub stride: (usize, usize),
    /// Cycle the six rotations and flips over consecutive patches.
    #[serde(default)]
    pub augment: bool,
}

fn tag(case: NoiseCase) -> NoiseTag {
    match case {
        NoiseCase::Case1 => NoiseTag::Case1,
        NoiseCase::Case2 => NoiseTag::Case2,
        NoiseCase::Case3 => NoiseTag::Case3,
        NoiseCase::Case4 => NoiseTag::Case4,
        NoiseCase::Case5 => NoiseTag::Case5,
    }
}

fn clean_cubes(job: &SynthJob) -> Result<Vec<HsiCube>> {
    let mut cubes = Vec::new();
    for path in &job.clean {
        let c = io::cube(path)?;
        cubes.push(if job.normalize { normalize(&c)? } else { c });
    }
    if let Some(s) = &job.scenes {
        let params = SceneParams::new(s.height, s.width, s.bands);
        for i in 0..s.count {
            cubes.push(synthetic_scene(&params, s.seed.wrapping_add(i as u64))?);
        }
    }
    if cubes.is_empty() {
        return Err(CliError::Invalid("synth needs clean files or scenes".into()));
    }
    let Some(p) = &job.patch else {
        return Ok(cubes);
    };
    let mut out = Vec::new();
    for c in &cubes {
        for patch in extract_patches(c, p.size, p.stride)? {
            let op = if p.augment {
                Augment::ALL[out.len() % Augment::ALL.len()]
            } else {
                Augment::Identity
            };
            out.push(augment(&patch, op));
        }
    }
    Ok(out)
}

pub fn run(ctx: &Context) -> Result<()> {
    let config = ctx.config()?;
    let mut job: SynthJob = io::read_config(config)?;
    if let Some(seed) = io::seed_override(ctx.seed)? {
        job.noise.seed = seed;
        if let Some(s) = &mut job.scenes {
            s.seed = seed;
        }
    }
    let out = io::output_dir(config, job.output_dir.as_ref(), ctx.out.as_ref())?;
    // disk holds 32-bit values; corrupting the rounded cube keeps the logs replayable from the files
    let cubes: Vec<HsiCube> = clean_cubes(&job)?
        .into_iter()
        .map(|c| c.map(|v| v as f32 as f64))
        .collect::<hwprox_core::Result<_>>()?;
    io::ensure_dir(&out)?;

    let results: Vec<(String, Vec<u8>, Vec<u8>, hwprox_core::NoiseLog)> = cubes
        .par_iter()
        .enumerate()
        .map(|(i, clean)| {
            let spec = NoiseSpec {
                seed: job.noise.seed.wrapping_add(i as u64),
                ..job.noise.clone()
            };
            let (noisy, log) = synth_noise(clean, &spec)?;
            Ok((format!("s{i:05}"), encode_cube(clean)?, encode_cube(&noisy)?, log))
        })
        .collect::<hwprox_core::Result<_>>()?;

    let mut entries = Vec::with_capacity(results.len());
    for (id, clean, noisy, log) in &results {
        let (c, n, l) = (
            format!("{id}_clean.hwc"),
            format!("{id}_noisy.hwc"),
            format!("{id}_noise.json"),
        );
        io::write_bytes(&out.join(&c), clean)?;
        io::write_bytes(&out.join(&n), noisy)?;
        io::write_json(&out.join(&l), log)?;
        entries.push(ManifestEntry {
            noisy: n.into(),
            clean: c.into(),
            case: tag(job.noise.case),
        });
    }
    let manifest = DatasetManifest {
        entries,
        seed: job.noise.seed,
    };
    manifest.save(out.join("manifest.json"))?;
    eprintln!("wrote {} pairs to {}", results.len(), out.display());
    Ok(())
}
