//! Subcommand implementations.

pub mod eval;
pub mod gen;
pub mod lift;
pub mod plot;
pub mod sweep;
pub mod train;

use std::path::{Path, PathBuf};

use replift_core::nets::{load_checkpoint, CheckpointManifest, LifterNetwork, ParameterSet};
use replift_core::skeleton::SkeletonSpec;

use crate::{CliError, CliResult};

pub fn resolve(workdir: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        workdir.join(path)
    }
}

/// Loads a checkpoint and reconstructs the lifter and skeleton it carries;
/// works for both bare network checkpoints and full training states.
pub fn load_lifter(path: &Path) -> CliResult<(LifterNetwork, SkeletonSpec, CheckpointManifest)> {
    let (manifest, params) = load_checkpoint(path)?;
    let skeleton = manifest.skeleton.clone();
    skeleton
        .validate()
        .map_err(|e| CliError::data(format!("checkpoint skeleton invalid: {e}")))?;
    let mut lifter = LifterNetwork::new(manifest.lifter.clone())
        .map_err(|e| CliError::data(format!("checkpoint lifter config invalid: {e}")))?;
    let lifter_tensors: Vec<_> = params
        .tensors
        .iter()
        .filter(|t| t.name.starts_with("lifter."))
        .cloned()
        .collect();
    ParameterSet {
        tensors: lifter_tensors,
    }
    .apply_to(&mut lifter)?;
    Ok((lifter, skeleton, manifest))
}
