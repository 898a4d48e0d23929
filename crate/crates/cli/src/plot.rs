//! SVG rendering: skeleton wireframes, training loss curves and noise-sweep
//! lines. Static files only; outputs are deterministic.

use std::path::Path;

use plotters::prelude::*;

use replift_core::skeleton::{Pose3D, SkeletonSpec};

use crate::{CliError, CliResult};

fn draw_err(e: impl std::fmt::Display) -> CliError {
    CliError::data(format!("plot rendering failed: {e}"))
}

/// Front view (x right, y up) of one pose; bones drawn when the joint count
/// matches the default skeleton.
pub fn render_skeleton(pose: &Pose3D, path: &Path, title: &str) -> CliResult<()> {
    let n = pose.n_joints();
    let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
    for j in 0..n {
        min_x = min_x.min(pose.coords()[(0, j)]);
        max_x = max_x.max(pose.coords()[(0, j)]);
        min_y = min_y.min(pose.coords()[(1, j)]);
        max_y = max_y.max(pose.coords()[(1, j)]);
    }
    let pad = 0.1 * ((max_x - min_x).max(max_y - min_y).max(1.0));
    let (min_x, max_x) = (min_x - pad, max_x + pad);
    let (min_y, max_y) = (min_y - pad, max_y + pad);

    let root = SVGBackend::new(path, (600, 600)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 18))
        .margin(10)
        .x_label_area_size(30)
        .y_label_area_size(40)
        .build_cartesian_2d(min_x..max_x, min_y..max_y)
        .map_err(draw_err)?;
    chart
        .configure_mesh()
        .disable_mesh()
        .draw()
        .map_err(draw_err)?;

    let spec = SkeletonSpec::h36m17();
    if n == spec.n_joints() {
        for &(r, t) in &spec.bones {
            let seg = vec![
                (pose.coords()[(0, r)], pose.coords()[(1, r)]),
                (pose.coords()[(0, t)], pose.coords()[(1, t)]),
            ];
            chart
                .draw_series(LineSeries::new(seg, BLUE.stroke_width(2)))
                .map_err(draw_err)?;
        }
    }
    chart
        .draw_series(
            (0..n).map(|j| {
                Circle::new(
                    (pose.coords()[(0, j)], pose.coords()[(1, j)]),
                    3,
                    RED.filled(),
                )
            }),
        )
        .map_err(draw_err)?;
    root.present().map_err(draw_err)?;
    Ok(())
}

pub struct Curve {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Multi-series line chart with automatic bounds.
pub fn render_curves(
    curves: &[Curve],
    path: &Path,
    title: &str,
    x_label: &str,
    y_label: &str,
) -> CliResult<()> {
    let mut min_x = f64::INFINITY;
    let mut max_x = f64::NEG_INFINITY;
    let mut min_y = f64::INFINITY;
    let mut max_y = f64::NEG_INFINITY;
    for c in curves {
        for &(x, y) in &c.points {
            min_x = min_x.min(x);
            max_x = max_x.max(x);
            min_y = min_y.min(y);
            max_y = max_y.max(y);
        }
    }
    if !min_x.is_finite() {
        return Err(CliError::data("nothing to plot"));
    }
    if (max_x - min_x).abs() < 1e-12 {
        max_x = min_x + 1.0;
    }
    let pad = 0.05 * (max_y - min_y).max(1e-9);
    let (min_y, max_y) = (min_y - pad, max_y + pad);

    let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 18))
        .margin(10)
        .x_label_area_size(35)
        .y_label_area_size(55)
        .build_cartesian_2d(min_x..max_x, min_y..max_y)
        .map_err(draw_err)?;
    chart
        .configure_mesh()
        .x_desc(x_label)
        .y_desc(y_label)
        .draw()
        .map_err(draw_err)?;

    let palette = [&RED, &BLUE, &GREEN, &MAGENTA, &CYAN, &BLACK];
    for (i, curve) in curves.iter().enumerate() {
        let color = palette[i % palette.len()];
        chart
            .draw_series(LineSeries::new(
                curve.points.iter().copied(),
                color.stroke_width(2),
            ))
            .map_err(draw_err)?
            .label(curve.label.clone())
            .legend(move |(x, y)| {
                PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2))
            });
    }
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.8))
        .draw()
        .map_err(draw_err)?;
    root.present().map_err(draw_err)?;
    Ok(())
}
