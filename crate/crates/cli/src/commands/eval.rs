//! `replift eval`: full metric report for a checkpoint on a paired dataset.

use std::fs;
use std::path::Path;

use replift_core::datagen::load_dataset;
use replift_core::eval::{evaluate, Provenance};

use crate::manifest::{digest_dir_into, file_digest, RunManifest};
use crate::{
    commands::{load_lifter, resolve},
    CliResult,
};

pub fn run(workdir: &Path, checkpoint: &Path, data: &Path, out: &Path) -> CliResult<()> {
    let checkpoint = resolve(workdir, checkpoint);
    let data_dir = resolve(workdir, data);
    let out = resolve(workdir, out);
    fs::create_dir_all(&out)?;

    let mut manifest = RunManifest::begin("eval", None);
    manifest.add_input("checkpoint", &checkpoint)?;
    digest_dir_into(&mut manifest, "data", &data_dir, true)?;

    let (lifter, skeleton, _) = load_lifter(&checkpoint)?;
    let dataset = load_dataset(&data_dir)?;

    let provenance = Provenance {
        checkpoint: file_digest(&checkpoint)?,
        dataset: file_digest(&data_dir.join("manifest.toml"))?,
        noise_sigma: 0.0,
    };
    let report = evaluate(&lifter, &[&dataset], &skeleton, provenance)?;

    let csv_path = out.join("report.csv");
    fs::write(&csv_path, report.to_csv())?;
    let table_path = out.join("report.txt");
    fs::write(&table_path, report.to_table())?;
    print!("{}", report.to_table());

    manifest.add_output("report.csv", &csv_path)?;
    manifest.add_output("report.txt", &table_path)?;
    manifest.finish(&out)?;
    Ok(())
}
