//! Self-describing checkpoint archive: a JSON manifest with the architecture
//! hyperparameters followed by named tensors stored as raw little-endian
//! 32-bit floats (column-major). Training state is kept on the f32 grid, so
//! the narrow storage is lossless and resumed runs replay exactly.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::critic::CriticConfig;
use super::lifter::LifterConfig;
use super::params::{NamedTensor, ParameterSet};
use crate::error::{Error, Result};
use crate::skeleton::SkeletonSpec;

const MAGIC: &[u8; 4] = b"RLCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    pub lifter: LifterConfig,
    pub critic: CriticConfig,
    pub skeleton: SkeletonSpec,
    pub kcs_enabled: bool,
    /// Training extras (epoch counter, optimizer step counts, RNG state,
    /// loss history); absent on bare network checkpoints.
    #[serde(default)]
    pub extra: serde_json::Value,
}

pub fn save_checkpoint(path: &Path, manifest: &CheckpointManifest, params: &ParameterSet) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());

    let manifest_json =
        serde_json::to_vec(manifest).map_err(|e| Error::Checkpoint(e.to_string()))?;
    buf.extend_from_slice(&(manifest_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&manifest_json);

    buf.extend_from_slice(&(params.tensors.len() as u32).to_le_bytes());
    for t in &params.tensors {
        let name = t.name.as_bytes();
        if name.len() > u16::MAX as usize {
            return Err(Error::Checkpoint(format!("tensor name too long: {}", t.name)));
        }
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name);
        buf.extend_from_slice(&(t.rows as u32).to_le_bytes());
        buf.extend_from_slice(&(t.cols as u32).to_le_bytes());
        if t.data.len() != t.rows * t.cols {
            return Err(Error::Checkpoint(format!(
                "tensor '{}' has {} values for shape {}x{}",
                t.name,
                t.data.len(),
                t.rows,
                t.cols
            )));
        }
        for &v in &t.data {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }

    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(CheckpointManifest, ParameterSet)> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut cursor = 0usize;

    let take = |cursor: &mut usize, len: usize| -> Result<&[u8]> {
        if *cursor + len > bytes.len() {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let slice = &bytes[*cursor..*cursor + len];
        *cursor += len;
        Ok(slice)
    };

    if take(&mut cursor, 4)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }

    let manifest_len = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap()) as usize;
    let manifest: CheckpointManifest = serde_json::from_slice(take(&mut cursor, manifest_len)?)
        .map_err(|e| Error::Checkpoint(format!("bad manifest: {e}")))?;

    let count = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap()) as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(&mut cursor, 2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut cursor, name_len)?.to_vec())
            .map_err(|e| Error::Checkpoint(format!("bad tensor name: {e}")))?;
        let rows = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap()) as usize;
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Checkpoint("tensor shape overflow".into()))?;
        let raw = take(&mut cursor, len * 4)?;
        let mut data = Vec::with_capacity(len);
        for chunk in raw.chunks_exact(4) {
            data.push(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
        }
        tensors.push(NamedTensor {
            name,
            rows,
            cols,
            data,
        });
    }
    if cursor != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after tensor data".into()));
    }
    Ok((manifest, ParameterSet { tensors }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{init_lifter, LifterNetwork};
    use tempfile::tempdir;

    #[test]
    fn checkpoint_round_trip_is_lossless() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let cfg = {
            let mut c = LifterConfig::new(5);
            c.hidden = 9;
            c
        };
        let net = init_lifter(&cfg, 77).unwrap();
        let manifest = CheckpointManifest {
            version: 1,
            lifter: cfg.clone(),
            critic: CriticConfig::new(5),
            skeleton: SkeletonSpec::h36m17(),
            kcs_enabled: true,
            extra: serde_json::Value::Null,
        };
        let params = ParameterSet::from_params(&net);
        save_checkpoint(&path, &manifest, &params).unwrap();

        let (loaded_manifest, loaded_params) = load_checkpoint(&path).unwrap();
        assert_eq!(loaded_manifest.lifter, cfg);
        // init quantizes to the f32 grid, so the f32 archive is exact
        assert_eq!(params, loaded_params);

        let mut rebuilt = LifterNetwork::new(cfg).unwrap();
        loaded_params.apply_to(&mut rebuilt).unwrap();
        assert_eq!(net, rebuilt);
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let cfg = {
            let mut c = LifterConfig::new(4);
            c.hidden = 6;
            c
        };
        let net = init_lifter(&cfg, 1).unwrap();
        let manifest = CheckpointManifest {
            version: 1,
            lifter: cfg,
            critic: CriticConfig::new(4),
            skeleton: SkeletonSpec::h36m17(),
            kcs_enabled: true,
            extra: serde_json::Value::Null,
        };
        save_checkpoint(&path, &manifest, &ParameterSet::from_params(&net)).unwrap();
        let (_, params) = load_checkpoint(&path).unwrap();

        let mut other = LifterNetwork::new({
            let mut c = LifterConfig::new(4);
            c.hidden = 7;
            c
        })
        .unwrap();
        assert!(params.apply_to(&mut other).is_err());
    }
}
