//! Weakly supervised 2D→3D human pose lifting.
//!
//! The crate implements the full training and evaluation stack: skeleton and
//! bone algebra with the KCS matrix, weak-perspective camera geometry, a
//! synthetic articulated-pose generator used as a desk-scale oracle, the
//! lifter/critic networks with hand-written backpropagation (including the
//! double-backward pass needed by the gradient penalty), the alternating
//! Wasserstein training loop, and the pose metrics (MPJPE, PCK3D, AUC,
//! symmetry error).

pub mod camera;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod nets;
pub mod skeleton;
pub mod train;

pub use error::{Error, Result};

#[cfg(test)]
pub(crate) mod testutil {
    use nalgebra::{Matrix3, Matrix3xX};
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    use crate::skeleton::Pose3D;

    pub fn random_pose(rng: &mut ChaCha8Rng, n: usize, spread: f64) -> Pose3D {
        let coords = Matrix3xX::from_fn(n, |_, _| (rng.random::<f64>() - 0.5) * 2.0 * spread);
        Pose3D::new(coords).unwrap()
    }

    /// Uniform random rotation via a normalized Gaussian quaternion.
    pub fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
        let q: [f64; 4] = std::array::from_fn(|_| {
            // Box-Muller
            let u1: f64 = rng.random::<f64>().max(1e-12);
            let u2: f64 = rng.random();
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        });
        let norm = (q.iter().map(|v| v * v).sum::<f64>()).sqrt();
        let (w, x, y, z) = (q[0] / norm, q[1] / norm, q[2] / norm, q[3] / norm);
        Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }
}
