//! Run manifests: every artifact-producing command records its inputs,
//! outputs and their digests next to the artifacts, so a run can be audited
//! and re-executed bit-identically.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliResult;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub started_unix: u64,
    pub finished_unix: u64,
    /// Relative path → sha256 digest of every input artifact.
    pub inputs: BTreeMap<String, String>,
    /// Relative path → sha256 digest of every produced artifact.
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn begin(command: &str, seed: Option<u64>) -> Self {
        RunManifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            started_unix: unix_now(),
            finished_unix: 0,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn add_input(&mut self, label: &str, path: &Path) -> CliResult<()> {
        self.inputs.insert(label.to_string(), file_digest(path)?);
        Ok(())
    }

    pub fn add_output(&mut self, label: &str, path: &Path) -> CliResult<()> {
        self.outputs.insert(label.to_string(), file_digest(path)?);
        Ok(())
    }

    /// Finalizes and writes `run.toml` into `dir`.
    pub fn finish(mut self, dir: &Path) -> CliResult<()> {
        self.finished_unix = unix_now();
        let text = toml::to_string(&self)
            .map_err(|e| crate::CliError::data(format!("manifest serialization: {e}")))?;
        std::fs::write(dir.join("run.toml"), text)?;
        Ok(())
    }
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn file_digest(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path)
        .map_err(|e| crate::CliError::data(format!("cannot digest {}: {e}", path.display())))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("sha256:{}", hex::encode(hasher.finalize())))
}

/// Digests every regular file of a dataset directory, keyed by file name.
pub fn digest_dir_into(
    manifest: &mut RunManifest,
    prefix: &str,
    dir: &Path,
    as_input: bool,
) -> CliResult<()> {
    let mut names: Vec<String> = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        if entry.path().is_file() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    for name in names {
        let label = format!("{prefix}/{name}");
        let path = dir.join(&name);
        if as_input {
            manifest.add_input(&label, &path)?;
        } else {
            manifest.add_output(&label, &path)?;
        }
    }
    Ok(())
}
