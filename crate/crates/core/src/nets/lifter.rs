//! The pose/camera estimation network: a shared-input two-branch MLP with
//! residual blocks. The pose branch outputs a root-centered 3D pose, the
//! camera branch the six weak-perspective camera parameters.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::layers::{leaky_relu, leaky_relu_deriv, Linear, Mat, ResBlock, ResBlockCache};
use super::params::{ParamTensors, TensorView, TensorViewMut};
use crate::camera::{camera_from_vector, CameraMatrix};
use crate::error::{Error, Result};
use crate::skeleton::Pose3D;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifterConfig {
    /// Joint count `n`; the network maps `2n → (3n, 6)`.
    pub joints: usize,
    /// Joint whose coordinates are subtracted from the pose output.
    pub root_index: usize,
    /// Width of the hidden layers.
    pub hidden: usize,
    /// Residual blocks per branch.
    pub blocks: usize,
    pub leaky_slope: f64,
    /// Camera branch reuses the pose branch's input layer and first block.
    pub shared_first_block: bool,
    /// The pose head is trained in these units; outputs are multiplied by
    /// this factor to yield millimeters.
    pub pose_scale: f64,
    /// Multiplier on the camera head, sizing raw outputs to the magnitude of
    /// normalized-2D over millimeter-3D projections.
    pub camera_scale: f64,
}

impl LifterConfig {
    pub fn new(joints: usize) -> Self {
        LifterConfig {
            joints,
            root_index: 0,
            hidden: 1000,
            blocks: 2,
            leaky_slope: 0.2,
            shared_first_block: false,
            pose_scale: 1000.0,
            camera_scale: 0.01,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.joints == 0 || self.hidden == 0 || self.blocks == 0 {
            return Err(Error::InvalidConfig(
                "lifter needs joints, hidden width and blocks > 0".into(),
            ));
        }
        if self.root_index >= self.joints {
            return Err(Error::InvalidConfig("lifter root index out of range".into()));
        }
        if self.shared_first_block && self.blocks < 2 {
            return Err(Error::InvalidConfig(
                "sharing the first block requires at least two blocks".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LifterNetwork {
    pub cfg: LifterConfig,
    pub pose_input: Linear,
    pub pose_blocks: Vec<ResBlock>,
    pub pose_output: Linear,
    /// Absent when the first block is shared with the pose branch.
    pub cam_input: Option<Linear>,
    pub cam_blocks: Vec<ResBlock>,
    pub cam_output: Linear,
}

pub struct LifterCache {
    x: Mat,
    pose_zin: Mat,
    pose_blocks: Vec<ResBlockCache>,
    pose_trunk: Mat,
    cam_zin: Option<Mat>,
    cam_blocks: Vec<ResBlockCache>,
    cam_trunk: Mat,
}

impl LifterNetwork {
    /// All-zero parameters in the configured shape.
    pub fn new(cfg: LifterConfig) -> Result<Self> {
        cfg.validate()?;
        let (n, h) = (cfg.joints, cfg.hidden);
        let cam_blocks = if cfg.shared_first_block {
            cfg.blocks - 1
        } else {
            cfg.blocks
        };
        Ok(LifterNetwork {
            pose_input: Linear::zeros(h, 2 * n),
            pose_blocks: (0..cfg.blocks).map(|_| ResBlock::zeros(h)).collect(),
            pose_output: Linear::zeros(3 * n, h),
            cam_input: if cfg.shared_first_block {
                None
            } else {
                Some(Linear::zeros(h, 2 * n))
            },
            cam_blocks: (0..cam_blocks).map(|_| ResBlock::zeros(h)).collect(),
            cam_output: Linear::zeros(6, h),
            cfg,
        })
    }

    /// Batched forward pass over input columns (`2n × m`). Returns the
    /// root-centered millimeter poses (`3n × m`) and camera parameter
    /// vectors (`6 × m`).
    pub fn forward_batch(&self, x: &Mat) -> Result<(Mat, Mat, LifterCache)> {
        if x.nrows() != 2 * self.cfg.joints {
            return Err(Error::DimensionMismatch {
                context: "lifter input",
                expected: 2 * self.cfg.joints,
                actual: x.nrows(),
            });
        }
        let slope = self.cfg.leaky_slope;

        let pose_zin = self.pose_input.forward(x);
        let mut act = leaky_relu(&pose_zin, slope);
        let mut pose_caches = Vec::with_capacity(self.pose_blocks.len());
        let mut shared_point = None;
        for (i, block) in self.pose_blocks.iter().enumerate() {
            let (next, cache) = block.forward(&act, slope);
            pose_caches.push(cache);
            act = next;
            if self.cfg.shared_first_block && i == 0 {
                shared_point = Some(act.clone());
            }
        }
        let pose_trunk = act;
        let pose_raw = self.pose_output.forward(&pose_trunk);

        let (cam_zin, mut cam_act) = match &self.cam_input {
            Some(input) => {
                let z = input.forward(x);
                let a = leaky_relu(&z, slope);
                (Some(z), a)
            }
            None => (None, shared_point.expect("shared point recorded")),
        };
        let mut cam_caches = Vec::with_capacity(self.cam_blocks.len());
        for block in &self.cam_blocks {
            let (next, cache) = block.forward(&cam_act, slope);
            cam_caches.push(cache);
            cam_act = next;
        }
        let cam_trunk = cam_act;
        let cam_raw = self.cam_output.forward(&cam_trunk);

        let pose = self.center_root(&(&pose_raw * self.cfg.pose_scale));
        let cam = cam_raw * self.cfg.camera_scale;

        Ok((
            pose,
            cam,
            LifterCache {
                x: x.clone(),
                pose_zin,
                pose_blocks: pose_caches,
                pose_trunk,
                cam_zin,
                cam_blocks: cam_caches,
                cam_trunk,
            },
        ))
    }

    /// Backward pass: gradients of a scalar loss with respect to the scaled,
    /// root-centered pose and camera outputs flow into `grads`.
    pub fn backward_batch(&self, cache: &LifterCache, d_pose: &Mat, d_cam: &Mat, grads: &mut LifterNetwork) {
        let slope = self.cfg.leaky_slope;

        let d_pose_raw = self.center_root_adjoint(d_pose) * self.cfg.pose_scale;
        let d_cam_raw = d_cam * self.cfg.camera_scale;

        // camera head back to its trunk
        let mut d_cam_act = self
            .cam_output
            .backward(&cache.cam_trunk, &d_cam_raw, &mut grads.cam_output);
        for i in (0..self.cam_blocks.len()).rev() {
            d_cam_act = self.cam_blocks[i].backward(
                &cache.cam_blocks[i],
                &d_cam_act,
                slope,
                &mut grads.cam_blocks[i],
            );
        }

        // pose head back through the pose blocks, merging the camera branch
        // gradient at the shared point when the first block is shared
        let mut d_pose_act =
            self.pose_output
                .backward(&cache.pose_trunk, &d_pose_raw, &mut grads.pose_output);
        for i in (0..self.pose_blocks.len()).rev() {
            if self.cfg.shared_first_block && i == 0 {
                d_pose_act += &d_cam_act;
            }
            d_pose_act = self.pose_blocks[i].backward(
                &cache.pose_blocks[i],
                &d_pose_act,
                slope,
                &mut grads.pose_blocks[i],
            );
        }

        let d_pose_zin = leaky_relu_deriv(&cache.pose_zin, slope).component_mul(&d_pose_act);
        self.pose_input
            .backward(&cache.x, &d_pose_zin, &mut grads.pose_input);

        if let (Some(input), Some(zin)) = (&self.cam_input, &cache.cam_zin) {
            let d_cam_zin = leaky_relu_deriv(zin, slope).component_mul(&d_cam_act);
            input.backward(
                &cache.x,
                &d_cam_zin,
                grads.cam_input.as_mut().expect("grad shape matches net"),
            );
        }
    }

    /// Single-sample lift: normalized, zero-filled 2D input to a
    /// root-centered 3D pose and a camera.
    pub fn lift_one(&self, w: &[f64]) -> Result<(Pose3D, CameraMatrix)> {
        if w.len() != 2 * self.cfg.joints {
            return Err(Error::DimensionMismatch {
                context: "lifter input vector",
                expected: 2 * self.cfg.joints,
                actual: w.len(),
            });
        }
        let x = Mat::from_column_slice(w.len(), 1, w);
        let (pose, cam, _) = self.forward_batch(&x)?;
        let pose = Pose3D::from_flat(pose.as_slice())?;
        let cam = camera_from_vector(cam.as_slice())?;
        Ok((pose, cam))
    }

    fn center_root(&self, pose: &Mat) -> Mat {
        let r = self.cfg.root_index;
        let mut out = pose.clone();
        for c in 0..3 {
            let root_row = pose.row(3 * r + c).into_owned();
            for j in 0..self.cfg.joints {
                let mut row = out.row_mut(3 * j + c);
                row -= &root_row;
            }
        }
        out
    }

    /// Adjoint of `center_root`: the root rows collect the negated sum of all
    /// other joints' gradients.
    fn center_root_adjoint(&self, d_pose: &Mat) -> Mat {
        let r = self.cfg.root_index;
        let mut out = d_pose.clone();
        for c in 0..3 {
            let mut acc = DVector::zeros(d_pose.ncols());
            for j in 0..self.cfg.joints {
                if j != r {
                    acc += d_pose.row(3 * j + c).transpose();
                }
            }
            out.row_mut(3 * r + c).copy_from(&(-acc).transpose());
        }
        out
    }
}

impl ParamTensors for LifterNetwork {
    fn tensors(&self) -> Vec<TensorView<'_>> {
        let mut out = Vec::new();
        fn push_linear<'a>(out: &mut Vec<TensorView<'a>>, name: String, l: &'a Linear) {
            out.push(TensorView {
                name: format!("{name}.w"),
                rows: l.w.nrows(),
                cols: l.w.ncols(),
                data: l.w.as_slice(),
            });
            out.push(TensorView {
                name: format!("{name}.b"),
                rows: l.b.nrows(),
                cols: 1,
                data: l.b.as_slice(),
            });
        }
        push_linear(&mut out, "lifter.pose.input".into(), &self.pose_input);
        for (i, b) in self.pose_blocks.iter().enumerate() {
            push_linear(&mut out, format!("lifter.pose.block{i}.l1"), &b.l1);
            push_linear(&mut out, format!("lifter.pose.block{i}.l2"), &b.l2);
        }
        push_linear(&mut out, "lifter.pose.output".into(), &self.pose_output);
        if let Some(input) = &self.cam_input {
            push_linear(&mut out, "lifter.cam.input".into(), input);
        }
        for (i, b) in self.cam_blocks.iter().enumerate() {
            push_linear(&mut out, format!("lifter.cam.block{i}.l1"), &b.l1);
            push_linear(&mut out, format!("lifter.cam.block{i}.l2"), &b.l2);
        }
        push_linear(&mut out, "lifter.cam.output".into(), &self.cam_output);
        out
    }

    fn tensors_mut(&mut self) -> Vec<TensorViewMut<'_>> {
        let mut out = Vec::new();
        fn push_linear<'a>(out: &mut Vec<TensorViewMut<'a>>, name: String, l: &'a mut Linear) {
            let (rows, cols) = (l.w.nrows(), l.w.ncols());
            out.push(TensorViewMut {
                name: format!("{name}.w"),
                rows,
                cols,
                data: l.w.as_mut_slice(),
            });
            let b_rows = l.b.nrows();
            out.push(TensorViewMut {
                name: format!("{name}.b"),
                rows: b_rows,
                cols: 1,
                data: l.b.as_mut_slice(),
            });
        }
        push_linear(&mut out, "lifter.pose.input".into(), &mut self.pose_input);
        for (i, b) in self.pose_blocks.iter_mut().enumerate() {
            push_linear(&mut out, format!("lifter.pose.block{i}.l1"), &mut b.l1);
            push_linear(&mut out, format!("lifter.pose.block{i}.l2"), &mut b.l2);
        }
        push_linear(&mut out, "lifter.pose.output".into(), &mut self.pose_output);
        if let Some(input) = &mut self.cam_input {
            push_linear(&mut out, "lifter.cam.input".into(), input);
        }
        for (i, b) in self.cam_blocks.iter_mut().enumerate() {
            push_linear(&mut out, format!("lifter.cam.block{i}.l1"), &mut b.l1);
            push_linear(&mut out, format!("lifter.cam.block{i}.l2"), &mut b.l2);
        }
        push_linear(&mut out, "lifter.cam.output".into(), &mut self.cam_output);
        out
    }

    fn zeros_like(&self) -> Self {
        LifterNetwork::new(self.cfg.clone()).expect("config already validated")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::init_lifter;
    use approx::assert_relative_eq;

    fn small_cfg(shared: bool) -> LifterConfig {
        LifterConfig {
            joints: 3,
            root_index: 0,
            hidden: 7,
            blocks: 2,
            leaky_slope: 0.2,
            shared_first_block: shared,
            pose_scale: 10.0,
            camera_scale: 0.5,
        }
    }

    #[test]
    fn zero_parameters_map_zero_input_to_zero_outputs() {
        let net = LifterNetwork::new(LifterConfig::new(17)).unwrap();
        let (pose, cam) = net.lift_one(&[0.0; 34]).unwrap();
        assert!(pose.coords().iter().all(|&v| v == 0.0));
        assert!(cam.matrix().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_deterministic_and_root_centered() {
        let net = init_lifter(&LifterConfig::new(17), 5).unwrap();
        let w: Vec<f64> = (0..34).map(|i| (i as f64 * 0.37).sin()).collect();
        let (pose_a, cam_a) = net.lift_one(&w).unwrap();
        let (pose_b, cam_b) = net.lift_one(&w).unwrap();
        assert_eq!(pose_a, pose_b);
        assert_eq!(cam_a, cam_b);
        assert_eq!(pose_a.joint(0), nalgebra::Vector3::zeros());
    }

    #[test]
    fn parameter_count_matches_architecture_arithmetic() {
        let cfg = LifterConfig::new(17);
        let net = LifterNetwork::new(cfg).unwrap();
        let (n, h) = (17usize, 1000usize);
        let branch_hidden = 2 * 2 * (h * h + h); // 2 blocks × 2 layers
        let pose = (2 * n * h + h) + branch_hidden + (h * 3 * n + 3 * n);
        let cam = (2 * n * h + h) + branch_hidden + (h * 6 + 6);
        assert_eq!(net.parameter_count(), pose + cam);
    }

    #[test]
    fn shared_trunk_drops_one_camera_block() {
        let mut cfg = LifterConfig::new(17);
        cfg.shared_first_block = true;
        let net = LifterNetwork::new(cfg).unwrap();
        assert!(net.cam_input.is_none());
        assert_eq!(net.cam_blocks.len(), 1);
        let h = 1000;
        let separate = LifterNetwork::new(LifterConfig::new(17)).unwrap();
        let dropped = (34 * h + h) + 2 * (h * h + h);
        assert_eq!(net.parameter_count(), separate.parameter_count() - dropped);
    }

    #[test]
    fn backward_matches_finite_differences() {
        for shared in [false, true] {
            let cfg = small_cfg(shared);
            let net = init_lifter(&cfg, 11).unwrap();
            let x = Mat::from_fn(6, 2, |r, c| ((r * 2 + c) as f64 * 0.61).sin());

            // scalar objective: sum of squares of both outputs
            let objective = |n: &LifterNetwork| -> f64 {
                let (pose, cam, _) = n.forward_batch(&x).unwrap();
                pose.iter().map(|v| v * v).sum::<f64>() + cam.iter().map(|v| v * v).sum::<f64>()
            };

            let (pose, cam, cache) = net.forward_batch(&x).unwrap();
            let d_pose = pose.map(|v| 2.0 * v);
            let d_cam = cam.map(|v| 2.0 * v);
            let mut grads = net.zeros_like();
            net.backward_batch(&cache, &d_pose, &d_cam, &mut grads);

            let step = 1e-6;
            let grad_views = grads.tensors();
            for (t_idx, view) in grad_views.iter().enumerate() {
                for e_idx in (0..view.data.len()).step_by(7) {
                    let mut plus = net.clone();
                    plus.tensors_mut()[t_idx].data[e_idx] += step;
                    let mut minus = net.clone();
                    minus.tensors_mut()[t_idx].data[e_idx] -= step;
                    let fd = (objective(&plus) - objective(&minus)) / (2.0 * step);
                    assert_relative_eq!(
                        view.data[e_idx],
                        fd,
                        max_relative = 1e-4,
                        epsilon = 1e-6
                    );
                }
            }
        }
    }
}
