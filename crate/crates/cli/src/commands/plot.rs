//! `replift plot`: detect the input flavor (3D pose file, metrics log,
//! sweep table) and render the matching SVG plots.

use std::fs;
use std::path::Path;

use replift_core::datagen::read_pose3d_file;
use replift_core::eval::SWEEP_CSV_HEADER;
use replift_core::train::METRICS_CSV_HEADER;

use crate::manifest::RunManifest;
use crate::plot::{render_curves, render_skeleton, Curve};
use crate::{commands::resolve, CliError, CliResult};

pub fn run(workdir: &Path, input: &Path, out: &Path, limit: usize) -> CliResult<()> {
    let input = resolve(workdir, input);
    let out = resolve(workdir, out);
    if !input.exists() {
        return Err(CliError::data(format!(
            "input file not found: {}",
            input.display()
        )));
    }
    fs::create_dir_all(&out)?;

    let mut manifest = RunManifest::begin("plot", None);
    manifest.add_input("input", &input)?;

    let first_line = {
        let text = fs::read_to_string(&input)?;
        text.lines().next().unwrap_or_default().to_string()
    };

    let outputs = if first_line.starts_with("#replift") && first_line.contains("kind=3d") {
        plot_poses(&input, &out, limit)?
    } else if first_line == METRICS_CSV_HEADER {
        plot_metrics(&input, &out)?
    } else if first_line == SWEEP_CSV_HEADER {
        plot_sweep(&input, &out)?
    } else {
        return Err(CliError::data(format!(
            "unrecognized input format in {}",
            input.display()
        )));
    };

    for name in &outputs {
        manifest.add_output(name, &out.join(name))?;
    }
    manifest.finish(&out)?;
    Ok(())
}

fn plot_poses(input: &Path, out: &Path, limit: usize) -> CliResult<Vec<String>> {
    let (poses, _) = read_pose3d_file(input)?;
    let mut outputs = Vec::new();
    for (i, pose) in poses.iter().take(limit.max(1)).enumerate() {
        let name = format!("pose_{i:04}.svg");
        render_skeleton(pose, &out.join(&name), &format!("frame {i}"))?;
        outputs.push(name);
    }
    Ok(outputs)
}

fn parse_csv(input: &Path) -> CliResult<(Vec<String>, Vec<Vec<Option<f64>>>)> {
    let text = fs::read_to_string(input)?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .unwrap_or_default()
        .split(',')
        .map(|s| s.to_string())
        .collect();
    let mut rows = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        rows.push(
            line.split(',')
                .map(|f| f.trim().parse::<f64>().ok())
                .collect(),
        );
    }
    Ok((header, rows))
}

fn column(header: &[String], rows: &[Vec<Option<f64>>], name: &str) -> Vec<Option<f64>> {
    match header.iter().position(|h| h == name) {
        Some(idx) => rows.iter().map(|r| r.get(idx).copied().flatten()).collect(),
        None => vec![None; rows.len()],
    }
}

fn paired(xs: &[Option<f64>], ys: &[Option<f64>]) -> Vec<(f64, f64)> {
    xs.iter()
        .zip(ys)
        .filter_map(|(x, y)| Some(((*x)?, (*y)?)))
        .collect()
}

fn plot_metrics(input: &Path, out: &Path) -> CliResult<Vec<String>> {
    let (header, rows) = parse_csv(input)?;
    let epoch = column(&header, &rows, "epoch");
    let mut curves = Vec::new();
    for name in ["w_loss", "rep_loss", "cam_loss", "gp"] {
        let points = paired(&epoch, &column(&header, &rows, name));
        if !points.is_empty() {
            curves.push(Curve {
                label: name.to_string(),
                points,
            });
        }
    }
    let mut outputs = vec!["loss_curves.svg".to_string()];
    render_curves(
        &curves,
        &out.join("loss_curves.svg"),
        "training losses",
        "epoch",
        "loss",
    )?;

    let eval_curves: Vec<Curve> = ["eval_mpjpe_p1", "eval_mpjpe_p2"]
        .iter()
        .filter_map(|name| {
            let points = paired(&epoch, &column(&header, &rows, name));
            (!points.is_empty()).then(|| Curve {
                label: name.to_string(),
                points,
            })
        })
        .collect();
    if !eval_curves.is_empty() {
        render_curves(
            &eval_curves,
            &out.join("eval_curves.svg"),
            "held-out MPJPE",
            "epoch",
            "mm",
        )?;
        outputs.push("eval_curves.svg".to_string());
    }
    Ok(outputs)
}

fn plot_sweep(input: &Path, out: &Path) -> CliResult<Vec<String>> {
    let (header, rows) = parse_csv(input)?;
    let sigma = column(&header, &rows, "sigma");
    let curves: Vec<Curve> = [("mpjpe_p2", "MPJPE-II"), ("sym_mean", "symmetry mean")]
        .iter()
        .filter_map(|(col, label)| {
            let points = paired(&sigma, &column(&header, &rows, col));
            (!points.is_empty()).then(|| Curve {
                label: label.to_string(),
                points,
            })
        })
        .collect();
    render_curves(
        &curves,
        &out.join("noise_sweep.svg"),
        "noise robustness",
        "sigma (px)",
        "mm",
    )?;
    Ok(vec!["noise_sweep.svg".to_string()])
}
