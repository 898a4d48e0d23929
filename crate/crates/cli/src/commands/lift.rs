//! `replift lift`: 2D keypoint file → 3D pose and camera files, with an
//! optional single-frame latency benchmark.

use std::fs;
use std::path::Path;
use std::time::Instant;

use replift_core::datagen::{
    read_pose2d_file, write_camera_file, write_pose3d_file, Pairing, PoseDataset,
};
use replift_core::eval::lift_dataset;

use crate::manifest::RunManifest;
use crate::{
    commands::{load_lifter, resolve},
    CliError, CliResult,
};

pub fn run(
    workdir: &Path,
    checkpoint: &Path,
    input: &Path,
    out: &Path,
    bench: bool,
    bench_frames: usize,
) -> CliResult<()> {
    let checkpoint = resolve(workdir, checkpoint);
    let input = resolve(workdir, input);
    let out = resolve(workdir, out);

    let mut manifest = RunManifest::begin("lift", None);
    manifest.add_input("checkpoint", &checkpoint)?;
    manifest.add_input("input", &input)?;

    let (lifter, skeleton, _) = load_lifter(&checkpoint)?;
    let masked: Vec<usize> = skeleton.spine_index.into_iter().collect();
    let (poses2d, normalized) = read_pose2d_file(&input, &masked)?;
    if let Some(p) = poses2d.first() {
        if p.n_joints() != skeleton.n_joints() {
            return Err(CliError::data(format!(
                "keypoint file has {} joints, checkpoint expects {}",
                p.n_joints(),
                skeleton.n_joints()
            )));
        }
    }

    let n = poses2d.len();
    let dataset = PoseDataset {
        poses2d,
        poses3d: Vec::new(),
        cameras: Vec::new(),
        template: None,
        pairing: Pairing::Paired,
        normalized_2d: normalized,
        aligned_3d: false,
        masked_joints: masked,
        joints: skeleton.n_joints(),
        action: "lift".to_string(),
        seed: 0,
    };

    let lifted = lift_dataset(&lifter, &dataset, &skeleton)?;
    let poses: Vec<_> = lifted.iter().map(|s| s.estimate.clone()).collect();
    let cameras: Vec<_> = lifted.iter().map(|s| s.camera.clone()).collect();

    write_pose3d_file(&out, &poses, skeleton.n_joints(), false)?;
    let cam_path = camera_sibling_path(&out);
    write_camera_file(&cam_path, &cameras, skeleton.n_joints())?;

    if bench {
        if n == 0 {
            return Err(CliError::data("--bench needs at least one input frame"));
        }
        let frames = bench_frames.max(1);
        // time the single-frame forward path (batch 1), cycling the inputs
        let mut latencies_ns = Vec::with_capacity(frames);
        let flat: Vec<Vec<f64>> = dataset
            .poses2d
            .iter()
            .map(|p| {
                let masked = p.masked_by(&skeleton.detectable_mask());
                let norm = if normalized {
                    masked
                } else {
                    replift_core::datagen::preprocess_2d(&masked, skeleton.root_index)
                        .unwrap_or(masked)
                };
                norm.to_zero_filled_flat()
            })
            .collect();
        let mut sink = 0.0f64;
        for i in 0..frames {
            let w = &flat[i % n];
            let t = Instant::now();
            let (pose, _) = lifter.lift_one(w)?;
            latencies_ns.push(t.elapsed().as_nanos() as u64);
            sink += pose.coords()[(0, 0)];
        }
        latencies_ns.sort_unstable();
        let mean_ms =
            latencies_ns.iter().sum::<u64>() as f64 / latencies_ns.len() as f64 / 1.0e6;
        let p99_ms = latencies_ns[(latencies_ns.len() * 99) / 100 - 1] as f64 / 1.0e6;
        println!(
            "bench: {frames} frames, batch 1: mean {mean_ms:.3} ms, p99 {p99_ms:.3} ms per frame"
        );
        // keep the compiler from eliding the forward passes
        if !sink.is_finite() {
            return Err(CliError::numerical("non-finite pose during benchmark"));
        }
    }

    manifest.add_output("poses", &out)?;
    manifest.add_output("cameras", &cam_path)?;
    if let Some(dir) = out.parent() {
        manifest.finish(dir)?;
    }
    Ok(())
}

/// `poses.rl` → `poses.cams.rl` next to it.
pub fn camera_sibling_path(out: &Path) -> std::path::PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "lifted".to_string());
    let ext = out
        .extension()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "rl".to_string());
    out.with_file_name(format!("{stem}.cams.{ext}"))
}
