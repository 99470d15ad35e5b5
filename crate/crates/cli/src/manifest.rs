//! Run manifests: what went in, what came out, and under which settings.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use forge_core::{ForgeError, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ForgeConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub seed: u64,
    pub config: ForgeConfig,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
}

pub fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| ForgeError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn digests(paths: &[PathBuf]) -> Result<BTreeMap<String, String>> {
    paths
        .iter()
        .map(|p| Ok((p.display().to_string(), sha256_file(p)?)))
        .collect()
}

impl RunManifest {
    pub fn record(
        command: &str,
        config: &ForgeConfig,
        inputs: &[PathBuf],
        outputs: &[PathBuf],
        started_unix_ms: u128,
    ) -> Result<Self> {
        Ok(RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed: config.pipeline.seed,
            config: config.clone(),
            inputs: digests(inputs)?,
            outputs: digests(outputs)?,
            started_unix_ms,
            finished_unix_ms: now_ms(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| ForgeError::json("run manifest", e))?;
        fs::write(path, text + "\n").map_err(|e| ForgeError::io(path, e))
    }
}

/// `numct.jsonl` -> `numct.jsonl.manifest.json`; directories get `run_manifest.json` inside.
pub fn manifest_path_for(output: &Path) -> PathBuf {
    if output.is_dir() {
        return output.join("run_manifest.json");
    }
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}
