use std::fs;
use std::path::{Path, PathBuf};

use hwprox_core::{load_cube, HsiCube};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, Result};

/// Seeds from the command line or `HWPROX_SEED`, in that order.
pub fn seed_override(flag: Option<u64>) -> Result<Option<u64>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("HWPROX_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Invalid(format!("HWPROX_SEED={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

pub fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::MissingInput(path.to_path_buf()),
        _ => CliError::Schema {
            path: path.to_path_buf(),
            msg: e.to_string(),
        },
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::Schema {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

pub fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingInput(path.to_path_buf()))
    }
}

pub fn cube(path: &Path) -> Result<HsiCube> {
    require(path)?;
    Ok(load_cube(path)?)
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| CliError::Write {
        path: dir.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(hwprox_core::Error::from)? + "\n";
    write_bytes(path, text.as_bytes())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

pub fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "cube".into())
}

/// `--out` wins over the config's `output_dir`.
pub fn output_dir(config: &Path, from_config: Option<&PathBuf>, flag: Option<&PathBuf>) -> Result<PathBuf> {
    flag.or(from_config).cloned().ok_or_else(|| CliError::Schema {
        path: config.to_path_buf(),
        msg: "no output_dir in config and no --out given".into(),
    })
}
