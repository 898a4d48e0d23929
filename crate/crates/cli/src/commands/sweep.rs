//! `replift sweep`: evaluation under increasing Gaussian 2D noise.

use std::fs;
use std::path::Path;

use replift_core::datagen::load_dataset;
use replift_core::eval::{noise_sweep, sweep_to_csv};

use crate::manifest::{digest_dir_into, RunManifest};
use crate::{
    commands::{load_lifter, resolve},
    CliError, CliResult,
};

pub fn run(
    workdir: &Path,
    checkpoint: &Path,
    data: &Path,
    out: &Path,
    sigmas: &str,
    noise_seed: u64,
) -> CliResult<()> {
    let checkpoint = resolve(workdir, checkpoint);
    let data_dir = resolve(workdir, data);
    let out = resolve(workdir, out);
    fs::create_dir_all(&out)?;

    let sigmas: Vec<f64> = sigmas
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| CliError::usage(format!("invalid sigma '{s}'")))
        })
        .collect::<CliResult<_>>()?;
    if sigmas.is_empty() {
        return Err(CliError::usage("at least one sigma is required"));
    }
    if sigmas.iter().any(|s| *s < 0.0) {
        return Err(CliError::usage("sigmas must be non-negative"));
    }

    let mut manifest = RunManifest::begin("sweep", Some(noise_seed));
    manifest.add_input("checkpoint", &checkpoint)?;
    digest_dir_into(&mut manifest, "data", &data_dir, true)?;

    let (lifter, skeleton, _) = load_lifter(&checkpoint)?;
    let dataset = load_dataset(&data_dir)?;
    let rows = noise_sweep(&lifter, &dataset, &skeleton, &sigmas, noise_seed)?;

    let csv = sweep_to_csv(&rows);
    let csv_path = out.join("sweep.csv");
    fs::write(&csv_path, &csv)?;
    print!("{csv}");

    manifest.add_output("sweep.csv", &csv_path)?;
    manifest.finish(&out)?;
    Ok(())
}
