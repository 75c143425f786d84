use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{Loaded, Overrides};

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(sha256_bytes(&bytes))
}

/// Provenance record written beside an artifact as `<artifact>.manifest.json`.
#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub command: &'a str,
    pub config_hash: String,
    pub flags: &'a Overrides,
    /// Input path (relative to the config directory when possible) to sha256.
    pub inputs: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub artifact: String,
    pub artifact_hash: String,
}

fn display_rel(base: &Path, p: &Path) -> String {
    p.strip_prefix(base).unwrap_or(p).display().to_string()
}

pub fn manifest_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    artifact.with_file_name(name)
}

pub fn write_manifest(
    artifact: &Path,
    command: &str,
    loaded: &Loaded,
    flags: &Overrides,
    inputs: &[PathBuf],
    seed: Option<u64>,
) -> Result<()> {
    let mut hashes = BTreeMap::new();
    for p in inputs {
        hashes.insert(display_rel(&loaded.base_dir, p), sha256_file(p)?);
    }
    let m = Manifest {
        command,
        config_hash: sha256_bytes(&loaded.raw),
        flags,
        inputs: hashes,
        seed,
        artifact: artifact.file_name().unwrap_or_default().to_string_lossy().into_owned(),
        artifact_hash: sha256_file(artifact)?,
    };
    let path = manifest_path(artifact);
    let mut s = serde_json::to_string_pretty(&m)?;
    s.push('\n');
    std::fs::write(&path, s).with_context(|| format!("writing {}", path.display()))
}
