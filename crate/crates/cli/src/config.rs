//! TOML config schemas for the CLI commands.

use std::path::Path;

use serde::{Deserialize, Serialize};

use replift_core::datagen::SyntheticPoseConfig;
use replift_core::train::TrainConfig;

use crate::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenKind {
    /// Matched 2D/3D/camera triples for evaluation.
    Paired,
    /// Two pools from different subjects and seeds for training.
    Unpaired,
}

/// Schema of `replift gen --config`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub kind: GenKind,
    pub seed: u64,
    pub count: usize,
    pub action: String,
    /// Generator settings shared by both pools (seed/count come from above).
    pub synth: SyntheticPoseConfig,
    /// 3D-pool overrides for unpaired generation; the pools must come from
    /// different subjects, so the seed has to differ and the limb scale
    /// usually does too.
    pub unpaired: UnpairedPool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct UnpairedPool {
    pub seed_3d: u64,
    pub limb_scale_3d: f64,
}

impl Default for UnpairedPool {
    fn default() -> Self {
        UnpairedPool {
            seed_3d: 1,
            limb_scale_3d: 1.06,
        }
    }
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            kind: GenKind::Paired,
            seed: 0,
            count: 1000,
            action: "synthetic".to_string(),
            synth: SyntheticPoseConfig::default(),
            unpaired: UnpairedPool::default(),
        }
    }
}

pub fn load_gen_config(path: &Path) -> CliResult<GenConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("cannot read config {}: {e}", path.display())))?;
    let cfg: GenConfig = toml::from_str(&text)
        .map_err(|e| CliError::data(format!("bad gen config {}: {e}", path.display())))?;
    if cfg.count == 0 {
        return Err(CliError::data("gen config: count must be positive"));
    }
    if cfg.kind == GenKind::Unpaired && cfg.unpaired.seed_3d == cfg.seed {
        return Err(CliError::data(
            "gen config: unpaired pools need distinct seeds (seed vs unpaired.seed_3d)",
        ));
    }
    Ok(cfg)
}

/// `replift train --config` deserializes straight into the core train config;
/// every field is optional and defaults match the library.
pub fn load_train_config(path: &Path) -> CliResult<TrainConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("cannot read config {}: {e}", path.display())))?;
    let cfg: TrainConfig = toml::from_str(&text)
        .map_err(|e| CliError::data(format!("bad train config {}: {e}", path.display())))?;
    Ok(cfg)
}
