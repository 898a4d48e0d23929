//! Quantitative pose metrics (MPJPE under both protocols, median, PCK3D, AUC,
//! symmetry statistics), the evaluation pipeline over a paired dataset and
//! the noise-robustness sweep.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::CameraMatrix;
use crate::datagen::{add_noise, preprocess_2d, NoiseSpec, Pairing, PoseDataset};
use crate::error::{Error, Result};
use crate::nets::{LifterNetwork, Mat};
use crate::skeleton::{procrustes_align, symmetry_error, Pose3D, SkeletonSpec};

/// PCK3D threshold, following the MPI-INF-3DHP convention.
pub const PCK_THRESHOLD_MM: f64 = 150.0;
/// AUC averages PCK over thresholds 0..=150 mm in these steps.
pub const AUC_STEP_MM: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    /// Direct comparison; the caller is responsible for expressing the
    /// estimate in the ground-truth frame (camera rotation applied upstream).
    One,
    /// Rigid (Procrustes) alignment of the estimate onto the truth first.
    Two,
}

/// Mean per-joint Euclidean distance in millimeters.
pub fn mpjpe(estimate: &Pose3D, truth: &Pose3D, protocol: Protocol) -> Result<f64> {
    if estimate.n_joints() != truth.n_joints() {
        return Err(Error::DimensionMismatch {
            context: "mpjpe",
            expected: truth.n_joints(),
            actual: estimate.n_joints(),
        });
    }
    let compared = match protocol {
        Protocol::One => estimate.clone(),
        Protocol::Two => match procrustes_align(estimate, truth) {
            Ok(fit) => fit.aligned,
            // a collapsed estimate cannot be aligned; every similarity
            // transform of it scores the same, so compare it directly
            Err(Error::Degenerate(_)) => estimate.clone(),
            Err(e) => return Err(e),
        },
    };
    let n = truth.n_joints();
    let sum: f64 = (0..n)
        .map(|j| (compared.joint(j) - truth.joint(j)).norm())
        .sum();
    Ok(sum / n as f64)
}

/// Percentage of joints within `threshold_mm`, over already-aligned pairs.
pub fn pck3d(estimates: &[Pose3D], truths: &[Pose3D], threshold_mm: f64) -> Result<f64> {
    if estimates.is_empty() || estimates.len() != truths.len() {
        return Err(Error::DimensionMismatch {
            context: "pck3d",
            expected: truths.len().max(1),
            actual: estimates.len(),
        });
    }
    let mut within = 0usize;
    let mut total = 0usize;
    for (e, t) in estimates.iter().zip(truths) {
        if e.n_joints() != t.n_joints() {
            return Err(Error::DimensionMismatch {
                context: "pck3d",
                expected: t.n_joints(),
                actual: e.n_joints(),
            });
        }
        for j in 0..e.n_joints() {
            if (e.joint(j) - t.joint(j)).norm() <= threshold_mm {
                within += 1;
            }
            total += 1;
        }
    }
    Ok(100.0 * within as f64 / total as f64)
}

/// Mean PCK over thresholds `0..=150` mm sampled every 5 mm, in percent.
pub fn auc(estimates: &[Pose3D], truths: &[Pose3D]) -> Result<f64> {
    let steps = (PCK_THRESHOLD_MM / AUC_STEP_MM) as usize;
    let mut acc = 0.0;
    for k in 0..=steps {
        acc += pck3d(estimates, truths, k as f64 * AUC_STEP_MM)?;
    }
    Ok(acc / (steps + 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymmetryStats {
    pub mean: f64,
    pub std: f64,
    pub max: f64,
}

pub fn symmetry_stats(poses: &[Pose3D], spec: &SkeletonSpec) -> Result<SymmetryStats> {
    if poses.is_empty() {
        return Err(Error::InvalidConfig("symmetry stats need at least one pose".into()));
    }
    let mut values = Vec::with_capacity(poses.len());
    for p in poses {
        values.push(symmetry_error(p, spec)?);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
    let max = values.iter().fold(0.0f64, |a, &b| a.max(b));
    Ok(SymmetryStats {
        mean,
        std: var.sqrt(),
        max,
    })
}

/// Sorted 50th percentile; even-length lists average the central pair.
pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite metric values"));
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

// ---------------------------------------------------------------------------
// Evaluation pipeline
// ---------------------------------------------------------------------------

/// One lifted frame: template-frame millimeter pose (never-detected joints
/// zeroed) plus the estimated camera.
#[derive(Debug, Clone)]
pub struct LiftedSample {
    pub estimate: Pose3D,
    pub camera: CameraMatrix,
}

/// Runs the lifter over every 2D observation of a dataset: per-dataset
/// masking, std-normalization, zero-filling, batched forward passes.
pub fn lift_dataset(
    lifter: &LifterNetwork,
    ds: &PoseDataset,
    spec: &SkeletonSpec,
) -> Result<Vec<LiftedSample>> {
    if ds.joints != spec.n_joints() {
        return Err(Error::DimensionMismatch {
            context: "lift dataset",
            expected: spec.n_joints(),
            actual: ds.joints,
        });
    }
    let detectable = spec.detectable_mask();
    let n = spec.n_joints();
    const CHUNK: usize = 128;

    let chunks: Vec<&[crate::skeleton::Pose2D]> = ds.poses2d.chunks(CHUNK).collect();
    let lifted: Result<Vec<Vec<LiftedSample>>> = chunks
        .par_iter()
        .map(|chunk| {
            let mut inputs = Mat::zeros(2 * n, chunk.len());
            for (c, pose) in chunk.iter().enumerate() {
                let masked = pose.masked_by(&detectable);
                let normalized = if ds.normalized_2d {
                    masked
                } else {
                    preprocess_2d(&masked, spec.root_index)?
                };
                inputs
                    .column_mut(c)
                    .copy_from_slice(&normalized.to_zero_filled_flat());
            }
            let (poses, cams, _) = lifter.forward_batch(&inputs)?;
            let mut out = Vec::with_capacity(chunk.len());
            for c in 0..chunk.len() {
                let mut pose = Pose3D::from_flat(poses.column(c).as_slice())?;
                if let Some(s) = spec.spine_index {
                    pose = pose.with_zeroed_joint(s);
                }
                let camera = crate::camera::camera_from_vector(cams.column(c).as_slice())?;
                out.push(LiftedSample { estimate: pose, camera });
            }
            Ok(out)
        })
        .collect();
    Ok(lifted?.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionMetrics {
    pub action: String,
    pub frames: usize,
    pub mpjpe_p1: f64,
    pub mpjpe_p2: f64,
    pub median_p2: f64,
    pub pck3d: f64,
    pub auc: f64,
    pub symmetry: SymmetryStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub checkpoint: String,
    pub dataset: String,
    pub noise_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub actions: Vec<ActionMetrics>,
    /// Frame mean per action, then the cross-action mean.
    pub aggregate: ActionMetrics,
    pub provenance: Provenance,
}

impl ActionMetrics {
    fn validate(&self) -> Result<()> {
        let pct_ok = |v: f64| (0.0..=100.0).contains(&v);
        if !pct_ok(self.pck3d) || !pct_ok(self.auc) {
            return Err(Error::NonFinite("percentage out of range".into()));
        }
        for v in [
            self.mpjpe_p1,
            self.mpjpe_p2,
            self.median_p2,
            self.symmetry.mean,
            self.symmetry.std,
            self.symmetry.max,
        ] {
            if !(v >= 0.0) {
                return Err(Error::NonFinite("negative metric".into()));
            }
        }
        Ok(())
    }
}

/// Evaluates a lifter against one paired dataset; one action row per call.
pub fn evaluate_dataset(
    lifter: &LifterNetwork,
    ds: &PoseDataset,
    spec: &SkeletonSpec,
) -> Result<ActionMetrics> {
    if ds.pairing != Pairing::Paired {
        return Err(Error::InvalidConfig(
            "evaluation needs a paired dataset".into(),
        ));
    }
    if ds.poses3d.len() != ds.poses2d.len() || ds.poses2d.is_empty() {
        return Err(Error::InvalidConfig(
            "evaluation needs matching non-empty 2D and 3D lists".into(),
        ));
    }
    let lifted = lift_dataset(lifter, ds, spec)?;
    metrics_from_samples(&lifted, ds, spec)
}

fn metrics_from_samples(
    lifted: &[LiftedSample],
    ds: &PoseDataset,
    spec: &SkeletonSpec,
) -> Result<ActionMetrics> {
    let eval_joints = spec.evaluated_joints();

    struct FrameResult {
        p1: f64,
        p2: f64,
        aligned: Pose3D,
        truth_sel: Pose3D,
    }

    let frames: Result<Vec<FrameResult>> = (0..lifted.len())
        .into_par_iter()
        .map(|i| {
            let estimate = &lifted[i].estimate;
            let truth = ds.poses3d[i].root_centered(spec.root_index);
            let truth_sel = truth.select_joints(&eval_joints);
            let est_sel = estimate.select_joints(&eval_joints);

            // Protocol-I: rotate the template-frame estimate into the
            // observing camera's frame via the estimated camera
            let est_cam = match lifted[i].camera.to_rotation() {
                Ok(rot) => est_sel.transformed(&rot, 1.0),
                Err(_) => est_sel.clone(),
            };
            let p1 = mpjpe(&est_cam, &truth_sel, Protocol::One)?;

            let (p2, aligned) = match procrustes_align(&est_sel, &truth_sel) {
                Ok(fit) => {
                    let n = truth_sel.n_joints();
                    let err = (0..n)
                        .map(|j| (fit.aligned.joint(j) - truth_sel.joint(j)).norm())
                        .sum::<f64>()
                        / n as f64;
                    (err, fit.aligned)
                }
                Err(Error::Degenerate(_)) => {
                    (mpjpe(&est_sel, &truth_sel, Protocol::One)?, est_sel.clone())
                }
                Err(e) => return Err(e),
            };
            Ok(FrameResult {
                p1,
                p2,
                aligned,
                truth_sel,
            })
        })
        .collect();
    let frames = frames?;

    let n = frames.len() as f64;
    let p1_list: Vec<f64> = frames.iter().map(|f| f.p1).collect();
    let p2_list: Vec<f64> = frames.iter().map(|f| f.p2).collect();
    let aligned: Vec<Pose3D> = frames.iter().map(|f| f.aligned.clone()).collect();
    let truths: Vec<Pose3D> = frames.iter().map(|f| f.truth_sel.clone()).collect();
    let estimates: Vec<Pose3D> = lifted.iter().map(|s| s.estimate.clone()).collect();

    let metrics = ActionMetrics {
        action: ds.action.clone(),
        frames: frames.len(),
        mpjpe_p1: p1_list.iter().sum::<f64>() / n,
        mpjpe_p2: p2_list.iter().sum::<f64>() / n,
        median_p2: median(&p2_list),
        pck3d: pck3d(&aligned, &truths, PCK_THRESHOLD_MM)?,
        auc: auc(&aligned, &truths)?,
        symmetry: symmetry_stats(&estimates, spec)?,
    };
    metrics.validate()?;
    Ok(metrics)
}

/// Full report over one or more paired datasets (one action each).
pub fn evaluate(
    lifter: &LifterNetwork,
    datasets: &[&PoseDataset],
    spec: &SkeletonSpec,
    provenance: Provenance,
) -> Result<EvalReport> {
    if datasets.is_empty() {
        return Err(Error::InvalidConfig("no datasets to evaluate".into()));
    }
    let mut actions = Vec::with_capacity(datasets.len());
    for ds in datasets {
        actions.push(evaluate_dataset(lifter, ds, spec)?);
    }
    let aggregate = aggregate_actions(&actions);
    Ok(EvalReport {
        actions,
        aggregate,
        provenance,
    })
}

fn aggregate_actions(actions: &[ActionMetrics]) -> ActionMetrics {
    let n = actions.len() as f64;
    let mean = |f: fn(&ActionMetrics) -> f64| actions.iter().map(f).sum::<f64>() / n;
    ActionMetrics {
        action: "all".to_string(),
        frames: actions.iter().map(|a| a.frames).sum(),
        mpjpe_p1: mean(|a| a.mpjpe_p1),
        mpjpe_p2: mean(|a| a.mpjpe_p2),
        median_p2: mean(|a| a.median_p2),
        pck3d: mean(|a| a.pck3d),
        auc: mean(|a| a.auc),
        symmetry: SymmetryStats {
            mean: mean(|a| a.symmetry.mean),
            std: mean(|a| a.symmetry.std),
            max: actions.iter().map(|a| a.symmetry.max).fold(0.0, f64::max),
        },
    }
}

// ---------------------------------------------------------------------------
// Noise sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sigma: f64,
    pub mpjpe_p2: f64,
    pub sym_mean: f64,
    pub sym_std: f64,
    pub sym_max: f64,
}

/// Re-evaluates the lifter under increasing 2D noise: for each sigma, noise
/// is injected into the raw pixel observations, then the standard pipeline
/// (normalize → lift → evaluate) runs unchanged.
pub fn noise_sweep(
    lifter: &LifterNetwork,
    ds: &PoseDataset,
    spec: &SkeletonSpec,
    sigmas: &[f64],
    noise_seed: u64,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(sigmas.len());
    for &sigma in sigmas {
        let noisy = add_noise(ds, &NoiseSpec { sigma, seed: noise_seed })?;
        let metrics = evaluate_dataset(lifter, &noisy, spec)?;
        rows.push(SweepRow {
            sigma,
            mpjpe_p2: metrics.mpjpe_p2,
            sym_mean: metrics.symmetry.mean,
            sym_std: metrics.symmetry.std,
            sym_max: metrics.symmetry.max,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

pub const REPORT_CSV_HEADER: &str =
    "action,frames,mpjpe_p1,mpjpe_p2,median_p2,pck3d,auc,sym_mean,sym_std,sym_max";

pub const SWEEP_CSV_HEADER: &str = "sigma,mpjpe_p2,sym_mean,sym_std,sym_max";

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_CSV_HEADER);
        out.push('\n');
        for row in self.actions.iter().chain(std::iter::once(&self.aggregate)) {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                row.action,
                row.frames,
                row.mpjpe_p1,
                row.mpjpe_p2,
                row.median_p2,
                row.pck3d,
                row.auc,
                row.symmetry.mean,
                row.symmetry.std,
                row.symmetry.max
            ));
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "checkpoint {}  dataset {}  sigma {}\n",
            self.provenance.checkpoint, self.provenance.dataset, self.provenance.noise_sigma
        ));
        out.push_str(&format!(
            "{:<12} {:>7} {:>9} {:>9} {:>9} {:>7} {:>7} {:>8} {:>8} {:>8}\n",
            "action", "frames", "MPJPE-I", "MPJPE-II", "median", "PCK3D", "AUC", "sym", "sym-std", "sym-max"
        ));
        for row in self.actions.iter().chain(std::iter::once(&self.aggregate)) {
            out.push_str(&format!(
                "{:<12} {:>7} {:>9.2} {:>9.2} {:>9.2} {:>7.2} {:>7.2} {:>8.2} {:>8.2} {:>8.2}\n",
                row.action,
                row.frames,
                row.mpjpe_p1,
                row.mpjpe_p2,
                row.median_p2,
                row.pck3d,
                row.auc,
                row.symmetry.mean,
                row.symmetry.std,
                row.symmetry.max
            ));
        }
        out
    }
}

pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.sigma, r.mpjpe_p2, r.sym_mean, r.sym_std, r.sym_max
        ));
    }
    out
}
