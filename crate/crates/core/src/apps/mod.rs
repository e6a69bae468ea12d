//! Experiment harnesses: optimizer runs, Monte-Carlo validation, privacy
//! reports, the bias-MSE tradeoff table, the trusted-neighbor sweep, the
//! Erdős–Rényi grid and distributed k-means.
//!
//! Every experiment is a pure function of its [`ExperimentConfig`] that
//! returns in-memory CSV/JSON artifacts; [`write_outputs`] persists them.

pub mod experiments;
pub mod kmeans;

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;

pub use experiments::{run_experiment, Experiment, ExperimentConfig, TopologySpec};

/// Files produced by one run, keyed by file name.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub files: BTreeMap<String, Vec<u8>>,
    pub summary: serde_json::Value,
}

/// Short SHA-256 digest of the canonical JSON form of a config.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    Ok(hex::encode(&Sha256::digest(&bytes)[..8]))
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.{}.tmp", std::process::id()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Writes every artifact plus `summary.json` into `dir`.
pub fn write_outputs(dir: &Path, out: &RunOutput) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (name, bytes) in &out.files {
        let path = dir.join(name);
        write_atomic(&path, bytes)?;
        written.push(path);
    }
    let path = dir.join("summary.json");
    let mut summary = serde_json::to_vec_pretty(&out.summary)?;
    summary.push(b'\n');
    write_atomic(&path, &summary)?;
    written.push(path);
    Ok(written)
}

/// Serializes rows into CSV bytes with a header from the row type.
pub(crate) fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}
