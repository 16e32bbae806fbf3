use hwprox_core::diagnostics::{run_gradcheck, GradcheckConfig};

use super::Context;
use crate::error::{CliError, Result};
use crate::io;

pub fn run(ctx: &Context) -> Result<()> {
    let mut cfg: GradcheckConfig = match &ctx.config {
        Some(p) => io::read_config(p)?,
        None => GradcheckConfig::default(),
    };
    if let Some(seed) = io::seed_override(ctx.seed)? {
        cfg.seed = seed;
    }
    if cfg.probes == 0 || !(cfg.step > 0.0) || !(cfg.tolerance > 0.0) {
        return Err(CliError::Invalid("probes, step and tolerance must be positive".into()));
    }
    let report = run_gradcheck(&cfg)?;
    for c in &report.checks {
        eprintln!(
            "{:<18} {:.3e} {}",
            c.op,
            c.max_rel_error,
            if c.passed { "ok" } else { "FAIL" }
        );
    }
    if let Some(out) = &ctx.out {
        io::ensure_dir(out)?;
        io::write_json(&out.join("gradcheck.json"), &report)?;
    }
    if report.passed {
        Ok(())
    } else {
        let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.op.as_str()).collect();
        Err(CliError::GradcheckFailed(failed.join(", ")))
    }
}
