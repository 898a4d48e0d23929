//! `replift gen`: synthetic dataset generation.

use std::path::Path;

use replift_core::datagen::{generate_synthetic, make_unpaired, save_dataset};

use crate::config::{load_gen_config, GenKind};
use crate::manifest::{digest_dir_into, RunManifest};
use crate::{commands::resolve, CliResult};

pub fn run(workdir: &Path, config_path: &Path, out: &Path) -> CliResult<()> {
    let config_path = resolve(workdir, config_path);
    let out = resolve(workdir, out);
    let cfg = load_gen_config(&config_path)?;

    let mut manifest = RunManifest::begin("gen", Some(cfg.seed));
    manifest.add_input("config", &config_path)?;

    let mut base = cfg.synth.clone();
    base.seed = cfg.seed;
    base.count = cfg.count;

    let mut dataset = match cfg.kind {
        GenKind::Paired => generate_synthetic(&base)?,
        GenKind::Unpaired => {
            let pool_2d = generate_synthetic(&base)?;
            let mut cfg_3d = base.clone();
            cfg_3d.seed = cfg.unpaired.seed_3d;
            cfg_3d.limb_scale = cfg.unpaired.limb_scale_3d;
            let pool_3d = generate_synthetic(&cfg_3d)?;
            make_unpaired(&pool_2d, &pool_3d)?
        }
    };
    dataset.action = cfg.action.clone();

    save_dataset(&dataset, &out)?;
    digest_dir_into(&mut manifest, "dataset", &out, false)?;
    manifest.finish(&out)?;
    Ok(())
}
