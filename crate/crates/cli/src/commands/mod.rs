pub mod denoise;
pub mod eval;
pub mod gradcheck;
pub mod synth;
pub mod theory;
pub mod train;

use std::path::PathBuf;

use hwprox_core::RegularizerSpec;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Flags shared by every command.
pub struct Context {
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl Context {
    pub fn config(&self) -> Result<&PathBuf> {
        self.config
            .as_ref()
            .ok_or_else(|| CliError::Invalid("this command needs --config".into()))
    }
}

/// A model given either as a combination string such as `"N+T"` or as
/// explicit specs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Models {
    Combo(String),
    Specs(Vec<RegularizerSpec>),
}

impl Models {
    /// One spec per listed model.
    pub fn list(&self) -> Result<Vec<RegularizerSpec>> {
        let specs = match self {
            Models::Combo(c) => RegularizerSpec::parse_combo(c)?,
            Models::Specs(v) => v.clone(),
        };
        for s in &specs {
            s.validate()?;
        }
        if specs.is_empty() {
            return Err(CliError::Invalid("empty model list".into()));
        }
        Ok(specs)
    }
}

/// A single target model; a multi-term combination becomes one composite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Target {
    Combo(String),
    Spec(RegularizerSpec),
}

impl Target {
    pub fn spec(&self) -> Result<RegularizerSpec> {
        let spec = match self {
            Target::Combo(c) if c.contains('+') => RegularizerSpec::composite_from_combo(c)?,
            Target::Combo(c) => RegularizerSpec::parse_combo(c)?.remove(0),
            Target::Spec(s) => s.clone(),
        };
        spec.validate()?;
        Ok(spec)
    }
}
