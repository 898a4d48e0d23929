//! Weak-perspective camera: reprojection, scale extraction and the camera
//! constraint loss, with analytic gradients for training.
//!
//! A weak-perspective camera is a `2×3` matrix `K`; an ideal one satisfies
//! `K·Kᵀ = s²·I₂` where `s` is the projection scale.

use nalgebra::{Matrix2, Matrix2x3, Matrix2xX, Matrix3, Matrix3xX, Vector3};

use crate::error::{Error, Result};
use crate::skeleton::{Pose2D, Pose3D};

/// Floor for `trace(K·Kᵀ)` in the camera loss; keeps gradients finite while
/// the camera head still outputs near-zero matrices.
pub const TRACE_EPS: f64 = 1e-8;

/// `2×3` weak-perspective projection.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraMatrix {
    matrix: Matrix2x3<f64>,
}

impl CameraMatrix {
    pub fn new(matrix: Matrix2x3<f64>) -> Result<Self> {
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("camera matrix".into()));
        }
        Ok(CameraMatrix { matrix })
    }

    pub fn matrix(&self) -> &Matrix2x3<f64> {
        &self.matrix
    }

    /// Row-major flattening, the inverse of [`camera_from_vector`].
    pub fn to_vector(&self) -> [f64; 6] {
        let m = &self.matrix;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
        ]
    }

    /// Completes the two camera rows to a proper rotation: row 1 normalized,
    /// row 2 re-orthogonalized against it, row 3 their cross product. Used to
    /// rotate estimates into the observing camera's frame.
    pub fn to_rotation(&self) -> Result<Matrix3<f64>> {
        let r1: Vector3<f64> = self.matrix.row(0).transpose();
        let r2: Vector3<f64> = self.matrix.row(1).transpose();
        let n1 = r1.norm();
        if n1 < 1e-12 {
            return Err(Error::Degenerate("camera row 1 is zero".into()));
        }
        let e1 = r1 / n1;
        let r2_orth = r2 - e1 * e1.dot(&r2);
        let n2 = r2_orth.norm();
        if n2 < 1e-12 {
            return Err(Error::Degenerate("camera rows are parallel".into()));
        }
        let e2 = r2_orth / n2;
        let e3 = e1.cross(&e2);
        Ok(Matrix3::from_rows(&[
            e1.transpose(),
            e2.transpose(),
            e3.transpose(),
        ]))
    }
}

/// Reshapes a length-6 vector into a camera, row-major:
/// `(a,b,c,d,e,f) → [[a,b,c],[d,e,f]]`.
pub fn camera_from_vector(v: &[f64]) -> Result<CameraMatrix> {
    if v.len() != 6 {
        return Err(Error::DimensionMismatch {
            context: "camera parameter vector",
            expected: 6,
            actual: v.len(),
        });
    }
    CameraMatrix::new(Matrix2x3::new(v[0], v[1], v[2], v[3], v[4], v[5]))
}

/// Projects a 3D pose to the image plane: `W' = K·X`. A parameter-free
/// linear map; all joints of the result are marked visible.
pub fn reproject(pose: &Pose3D, cam: &CameraMatrix) -> Pose2D {
    let coords = Matrix2xX::from(cam.matrix() * pose.coords());
    Pose2D::fully_visible(coords).expect("projection of finite inputs is finite")
}

/// Frobenius norm of `W − K·X` with the columns of both sides zeroed where
/// the observation marks a joint invisible, so masked joints carry no signal.
pub fn reprojection_loss(observed: &Pose2D, pose: &Pose3D, cam: &CameraMatrix) -> Result<f64> {
    Ok(reprojection_loss_grad(observed, pose, cam)?.0)
}

/// Reprojection loss plus its gradients with respect to the pose and the
/// camera. The norm's subgradient at zero is taken as zero.
pub fn reprojection_loss_grad(
    observed: &Pose2D,
    pose: &Pose3D,
    cam: &CameraMatrix,
) -> Result<(f64, Matrix3xX<f64>, Matrix2x3<f64>)> {
    let n = observed.n_joints();
    if pose.n_joints() != n {
        return Err(Error::DimensionMismatch {
            context: "reprojection loss",
            expected: n,
            actual: pose.n_joints(),
        });
    }
    let mut diff = Matrix2xX::from(cam.matrix() * pose.coords());
    diff = observed.coords() - diff;
    for j in 0..n {
        if !observed.is_visible(j) {
            diff.column_mut(j).fill(0.0);
        }
    }
    let loss = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
    if loss == 0.0 {
        return Ok((0.0, Matrix3xX::zeros(n), Matrix2x3::zeros()));
    }
    // d‖D‖/dX = -Kᵀ·D/‖D‖, d‖D‖/dK = -(D/‖D‖)·Xᵀ with masked columns of X
    // contributing nothing (their D columns are zero, and masked X columns
    // must not leak into the K gradient either).
    let scaled = diff / loss;
    let grad_x = Matrix3xX::from(-(cam.matrix().transpose() * &scaled));
    let mut masked_pose = pose.coords().clone();
    for j in 0..n {
        if !observed.is_visible(j) {
            masked_pose.column_mut(j).fill(0.0);
        }
    }
    let grad_k = Matrix2x3::from(-(scaled * masked_pose.transpose()));
    Ok((loss, grad_x, grad_k))
}

/// Scale of a weak-perspective camera: `s = √(trace(K·Kᵀ)/2)`, the
/// root-mean-square of the two singular values.
pub fn camera_scale(cam: &CameraMatrix) -> f64 {
    let k = cam.matrix();
    ((k * k.transpose()).trace() / 2.0).sqrt()
}

/// Weak-perspective constraint loss:
/// `‖ (2/trace(K·Kᵀ))·K·Kᵀ − I₂ ‖_F`, zero exactly when `K·Kᵀ` is a positive
/// multiple of the identity.
pub fn camera_loss(cam: &CameraMatrix) -> f64 {
    camera_loss_grad(cam).0
}

/// Camera loss plus its gradient with respect to `K`.
pub fn camera_loss_grad(cam: &CameraMatrix) -> (f64, Matrix2x3<f64>) {
    let k = cam.matrix();
    let a: Matrix2<f64> = k * k.transpose();
    let trace = a.trace();
    let trace_floored = trace.max(TRACE_EPS);
    let normalized = a * (2.0 / trace_floored) - Matrix2::identity();
    let loss = normalized.iter().map(|v| v * v).sum::<f64>().sqrt();
    if loss == 0.0 {
        return (0.0, Matrix2x3::zeros());
    }
    let n_over_l = normalized / loss;
    // dL/dA = (2/t)·N/L − (2/t²)·⟨N/L, A⟩·I  (second term absent on the floor)
    let mut grad_a = n_over_l * (2.0 / trace_floored);
    if trace > TRACE_EPS {
        let inner = n_over_l.dot(&a);
        grad_a -= Matrix2::identity() * (2.0 * inner / (trace_floored * trace_floored));
    }
    // dL/dK = (G + Gᵀ)·K = 2·G·K for symmetric G
    let grad_k = (grad_a + grad_a.transpose()) * k;
    (loss, grad_k)
}
