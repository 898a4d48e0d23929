//! The Wasserstein critic: a KCS path (bone Gram matrix → two dense layers)
//! in parallel with a dense path on the raw pose vector, merged into a single
//! unbounded critic value.
//!
//! Besides the usual parameter and input gradients, the critic implements the
//! double-backward pass the gradient penalty needs: the penalty
//! `(‖∇_x critic(x)‖ − 1)²` is differentiated with respect to the parameters
//! by a forward-tangent sweep along `v = ∂penalty/∂g` followed by a reverse
//! sweep over the tangent graph. Activations are piecewise linear, so the
//! primal adjoints vanish and biases receive no penalty gradient.

use serde::{Deserialize, Serialize};

use super::layers::{leaky_relu, leaky_relu_deriv, vsplit, vstack, Linear, Mat};
use super::params::{ParamTensors, TensorView, TensorViewMut};
use crate::error::{Error, Result};
use crate::skeleton::{BoneMap, SkeletonSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticConfig {
    pub joints: usize,
    /// Disables the KCS path entirely (the ablation configuration).
    pub kcs_enabled: bool,
    /// Width of the two dense layers after the KCS layer.
    pub kcs_width: usize,
    /// Width of the two dense layers on the raw pose vector.
    pub direct_width: usize,
    pub leaky_slope: f64,
}

impl CriticConfig {
    pub fn new(joints: usize) -> Self {
        CriticConfig {
            joints,
            kcs_enabled: true,
            kcs_width: 100,
            direct_width: 100,
            leaky_slope: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.joints == 0 || self.direct_width == 0 {
            return Err(Error::InvalidConfig(
                "critic needs joints and direct width > 0".into(),
            ));
        }
        if self.kcs_enabled && self.kcs_width == 0 {
            return Err(Error::InvalidConfig("kcs width must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticNetwork {
    pub cfg: CriticConfig,
    /// Joint-to-bone incidence; a constant of the skeleton, not a parameter.
    bone_incidence: Mat,
    pub kcs_fc1: Option<Linear>,
    pub kcs_fc2: Option<Linear>,
    pub direct_fc1: Linear,
    pub direct_fc2: Linear,
    pub output: Linear,
}

pub struct CriticCache {
    x: Mat,
    /// Per-sample bone matrices `B = X·C`, kept for the KCS backward pass.
    bones: Vec<Mat>,
    kcs_features: Option<Mat>,
    zk1: Option<Mat>,
    ak1: Option<Mat>,
    zk2: Option<Mat>,
    zd1: Mat,
    ad1: Mat,
    zd2: Mat,
    merged: Mat,
}

impl CriticNetwork {
    /// All-zero parameters in the configured shape.
    pub fn new(cfg: CriticConfig, skeleton: &SkeletonSpec) -> Result<Self> {
        cfg.validate()?;
        if skeleton.n_joints() != cfg.joints {
            return Err(Error::DimensionMismatch {
                context: "critic skeleton",
                expected: cfg.joints,
                actual: skeleton.n_joints(),
            });
        }
        let bone_incidence = BoneMap::from_spec(skeleton)?.matrix().clone();
        let b = bone_incidence.ncols();
        let n3 = 3 * cfg.joints;
        let merged_width = if cfg.kcs_enabled {
            cfg.kcs_width + cfg.direct_width
        } else {
            cfg.direct_width
        };
        Ok(CriticNetwork {
            kcs_fc1: cfg
                .kcs_enabled
                .then(|| Linear::zeros(cfg.kcs_width, b * b)),
            kcs_fc2: cfg
                .kcs_enabled
                .then(|| Linear::zeros(cfg.kcs_width, cfg.kcs_width)),
            direct_fc1: Linear::zeros(cfg.direct_width, n3),
            direct_fc2: Linear::zeros(cfg.direct_width, cfg.direct_width),
            output: Linear::zeros(1, merged_width),
            bone_incidence,
            cfg,
        })
    }

    pub fn n_bones(&self) -> usize {
        self.bone_incidence.ncols()
    }

    /// Batched forward pass: pose vectors (`3n × m`, joint-major) to critic
    /// values (`1 × m`).
    pub fn forward(&self, x: &Mat) -> Result<(Mat, CriticCache)> {
        let n3 = 3 * self.cfg.joints;
        if x.nrows() != n3 {
            return Err(Error::DimensionMismatch {
                context: "critic input",
                expected: n3,
                actual: x.nrows(),
            });
        }
        let m = x.ncols();
        let slope = self.cfg.leaky_slope;
        let b = self.n_bones();

        let (bones, kcs_features, zk1, ak1, zk2, ak2) = if self.cfg.kcs_enabled {
            let mut bones = Vec::with_capacity(m);
            let mut features = Mat::zeros(b * b, m);
            for i in 0..m {
                let pose = Mat::from_column_slice(3, self.cfg.joints, x.column(i).as_slice());
                let bone_mat = &pose * &self.bone_incidence;
                let psi = bone_mat.tr_mul(&bone_mat);
                features.column_mut(i).copy_from_slice(psi.as_slice());
                bones.push(bone_mat);
            }
            let fc1 = self.kcs_fc1.as_ref().expect("kcs enabled");
            let fc2 = self.kcs_fc2.as_ref().expect("kcs enabled");
            let zk1 = fc1.forward(&features);
            let ak1 = leaky_relu(&zk1, slope);
            let zk2 = fc2.forward(&ak1);
            let ak2 = leaky_relu(&zk2, slope);
            (bones, Some(features), Some(zk1), Some(ak1), Some(zk2), Some(ak2))
        } else {
            (Vec::new(), None, None, None, None, None)
        };

        let zd1 = self.direct_fc1.forward(x);
        let ad1 = leaky_relu(&zd1, slope);
        let zd2 = self.direct_fc2.forward(&ad1);
        let ad2 = leaky_relu(&zd2, slope);

        let merged = match &ak2 {
            Some(kcs_out) => vstack(kcs_out, &ad2),
            None => ad2.clone(),
        };
        let y = self.output.forward(&merged);

        Ok((
            y,
            CriticCache {
                x: x.clone(),
                bones,
                kcs_features,
                zk1,
                ak1,
                zk2,
                zd1,
                ad1,
                zd2,
                merged,
            },
        ))
    }

    /// Convenience scalar forward for a single pose vector.
    pub fn forward_one(&self, pose: &[f64]) -> Result<f64> {
        let x = Mat::from_column_slice(pose.len(), 1, pose);
        let (y, _) = self.forward(&x)?;
        Ok(y[(0, 0)])
    }

    /// Backward pass. `dy` holds one adjoint per batch column; parameter
    /// gradients accumulate into `grads` when provided. Returns the input
    /// gradient (`3n × m`), which is exact per sample since columns do not
    /// interact.
    pub fn backward(&self, cache: &CriticCache, dy: &Mat, mut grads: Option<&mut CriticNetwork>) -> Mat {
        let slope = self.cfg.leaky_slope;
        let m = cache.x.ncols();
        let n3 = 3 * self.cfg.joints;

        let d_merged = match grads.as_deref_mut() {
            Some(g) => self.output.backward(&cache.merged, dy, &mut g.output),
            None => self.output.w.tr_mul(dy),
        };

        let (d_kcs_out, d_direct_out) = if self.cfg.kcs_enabled {
            let (top, bottom) = vsplit(&d_merged, self.cfg.kcs_width);
            (Some(top), bottom)
        } else {
            (None, d_merged)
        };

        let mut dx = Mat::zeros(n3, m);

        if let Some(d_ak2) = d_kcs_out {
            let fc1 = self.kcs_fc1.as_ref().expect("kcs enabled");
            let fc2 = self.kcs_fc2.as_ref().expect("kcs enabled");
            let zk2 = cache.zk2.as_ref().expect("kcs cache");
            let zk1 = cache.zk1.as_ref().expect("kcs cache");
            let ak1 = cache.ak1.as_ref().expect("kcs cache");
            let features = cache.kcs_features.as_ref().expect("kcs cache");

            let dzk2 = leaky_relu_deriv(zk2, slope).component_mul(&d_ak2);
            let d_ak1 = match grads.as_deref_mut() {
                Some(g) => fc2.backward(ak1, &dzk2, g.kcs_fc2.as_mut().expect("kcs grads")),
                None => fc2.w.tr_mul(&dzk2),
            };
            let dzk1 = leaky_relu_deriv(zk1, slope).component_mul(&d_ak1);
            let d_features = match grads.as_deref_mut() {
                Some(g) => fc1.backward(features, &dzk1, g.kcs_fc1.as_mut().expect("kcs grads")),
                None => fc1.w.tr_mul(&dzk1),
            };

            // KCS layer adjoint: Ψ = BᵀB with B = X·C gives
            // dB = B·(dΨ + dΨᵀ), dX = dB·Cᵀ
            let b = self.n_bones();
            for i in 0..m {
                let d_psi = Mat::from_column_slice(b, b, d_features.column(i).as_slice());
                let d_bones = &cache.bones[i] * (&d_psi + d_psi.transpose());
                let d_pose = d_bones * self.bone_incidence.transpose();
                let col = dx.column_mut(i);
                add_pose_matrix(col, &d_pose);
            }
        }

        let dzd2 = leaky_relu_deriv(&cache.zd2, slope).component_mul(&d_direct_out);
        let d_ad1 = match grads.as_deref_mut() {
            Some(g) => self.direct_fc2.backward(&cache.ad1, &dzd2, &mut g.direct_fc2),
            None => self.direct_fc2.w.tr_mul(&dzd2),
        };
        let dzd1 = leaky_relu_deriv(&cache.zd1, slope).component_mul(&d_ad1);
        let d_direct_in = match grads.as_deref_mut() {
            Some(g) => self.direct_fc1.backward(&cache.x, &dzd1, &mut g.direct_fc1),
            None => self.direct_fc1.w.tr_mul(&dzd1),
        };
        dx += d_direct_in;
        dx
    }

    /// Improved-Wasserstein gradient penalty over a batch of interpolates:
    /// `mean_i (‖∇_x critic(x_i)‖₂ − 1)²`. When `grads` is given, accumulates
    /// `gp_weight · ∂mean/∂θ`. The mean (unweighted) penalty is returned.
    pub fn gradient_penalty(
        &self,
        x: &Mat,
        gp_weight: f64,
        grads: Option<&mut CriticNetwork>,
    ) -> Result<f64> {
        let m = x.ncols();
        let slope = self.cfg.leaky_slope;
        let (_, cache) = self.forward(x)?;
        let ones = Mat::from_element(1, m, 1.0);
        let input_grad = self.backward(&cache, &ones, None);

        let mut penalty = 0.0;
        let mut tangent_dir = Mat::zeros(input_grad.nrows(), m);
        for i in 0..m {
            let g = input_grad.column(i);
            let norm = g.norm();
            let gap = norm - 1.0;
            penalty += gap * gap;
            if norm > 1e-12 {
                // v = ∂p/∂g, scaled by gp_weight/m so the reverse sweep
                // accumulates the weighted batch-mean gradient directly
                let coeff = 2.0 * gap / norm * (gp_weight / m as f64);
                tangent_dir.column_mut(i).copy_from(&(g * coeff));
            }
        }
        penalty /= m as f64;

        let grads = match grads {
            Some(g) => g,
            None => return Ok(penalty),
        };

        // forward-tangent sweep along v
        let b = self.n_bones();
        let (kcs_tangent, zk1t_ak1t) = if self.cfg.kcs_enabled {
            let mut features_t = Mat::zeros(b * b, m);
            for i in 0..m {
                let pose_t =
                    Mat::from_column_slice(3, self.cfg.joints, tangent_dir.column(i).as_slice());
                let bones_t = &pose_t * &self.bone_incidence;
                // tangent of Ψ = BᵀB
                let psi_t = bones_t.tr_mul(&cache.bones[i]) + cache.bones[i].tr_mul(&bones_t);
                features_t.column_mut(i).copy_from_slice(psi_t.as_slice());
            }
            let fc1 = self.kcs_fc1.as_ref().expect("kcs enabled");
            let fc2 = self.kcs_fc2.as_ref().expect("kcs enabled");
            let zk1_t = fc1.jvp(&features_t);
            let ak1_t =
                leaky_relu_deriv(cache.zk1.as_ref().unwrap(), slope).component_mul(&zk1_t);
            let zk2_t = fc2.jvp(&ak1_t);
            let ak2_t =
                leaky_relu_deriv(cache.zk2.as_ref().unwrap(), slope).component_mul(&zk2_t);
            (Some((features_t, ak2_t)), Some(ak1_t))
        } else {
            (None, None)
        };

        let zd1_t = self.direct_fc1.jvp(&tangent_dir);
        let ad1_t = leaky_relu_deriv(&cache.zd1, slope).component_mul(&zd1_t);
        let zd2_t = self.direct_fc2.jvp(&ad1_t);
        let ad2_t = leaky_relu_deriv(&cache.zd2, slope).component_mul(&zd2_t);

        let merged_t = match &kcs_tangent {
            Some((_, ak2_t)) => vstack(ak2_t, &ad2_t),
            None => ad2_t.clone(),
        };

        // reverse sweep over the tangent graph, seeded with 1 per sample
        let d_merged_t = self
            .output
            .backward_tangent(&merged_t, &ones, &mut grads.output);

        let (d_ak2_t, d_ad2_t) = if self.cfg.kcs_enabled {
            let (top, bottom) = vsplit(&d_merged_t, self.cfg.kcs_width);
            (Some(top), bottom)
        } else {
            (None, d_merged_t)
        };

        if let (Some(d_ak2_t), Some((features_t, _)), Some(ak1_t)) =
            (d_ak2_t, &kcs_tangent, &zk1t_ak1t)
        {
            let fc1 = self.kcs_fc1.as_ref().expect("kcs enabled");
            let fc2 = self.kcs_fc2.as_ref().expect("kcs enabled");
            let dzk2_t =
                leaky_relu_deriv(cache.zk2.as_ref().unwrap(), slope).component_mul(&d_ak2_t);
            let d_ak1_t =
                fc2.backward_tangent(ak1_t, &dzk2_t, grads.kcs_fc2.as_mut().expect("kcs grads"));
            let dzk1_t =
                leaky_relu_deriv(cache.zk1.as_ref().unwrap(), slope).component_mul(&d_ak1_t);
            fc1.backward_tangent(
                features_t,
                &dzk1_t,
                grads.kcs_fc1.as_mut().expect("kcs grads"),
            );
        }

        let dzd2_t = leaky_relu_deriv(&cache.zd2, slope).component_mul(&d_ad2_t);
        let d_ad1_t = self
            .direct_fc2
            .backward_tangent(&ad1_t, &dzd2_t, &mut grads.direct_fc2);
        let dzd1_t = leaky_relu_deriv(&cache.zd1, slope).component_mul(&d_ad1_t);
        self.direct_fc1
            .backward_tangent(&tangent_dir, &dzd1_t, &mut grads.direct_fc1);

        Ok(penalty)
    }
}

fn add_pose_matrix(mut col: nalgebra::DVectorViewMut<f64>, pose_grad: &Mat) {
    for (dst, src) in col.iter_mut().zip(pose_grad.as_slice()) {
        *dst += src;
    }
}

impl ParamTensors for CriticNetwork {
    fn tensors(&self) -> Vec<TensorView<'_>> {
        let mut out = Vec::new();
        fn push_linear<'a>(out: &mut Vec<TensorView<'a>>, name: &str, l: &'a Linear) {
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
        if let Some(l) = &self.kcs_fc1 {
            push_linear(&mut out, "critic.kcs.fc1", l);
        }
        if let Some(l) = &self.kcs_fc2 {
            push_linear(&mut out, "critic.kcs.fc2", l);
        }
        push_linear(&mut out, "critic.direct.fc1", &self.direct_fc1);
        push_linear(&mut out, "critic.direct.fc2", &self.direct_fc2);
        push_linear(&mut out, "critic.output", &self.output);
        out
    }

    fn tensors_mut(&mut self) -> Vec<TensorViewMut<'_>> {
        let mut out = Vec::new();
        fn push_linear<'a>(out: &mut Vec<TensorViewMut<'a>>, name: &str, l: &'a mut Linear) {
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
        if let Some(l) = &mut self.kcs_fc1 {
            push_linear(&mut out, "critic.kcs.fc1", l);
        }
        if let Some(l) = &mut self.kcs_fc2 {
            push_linear(&mut out, "critic.kcs.fc2", l);
        }
        push_linear(&mut out, "critic.direct.fc1", &mut self.direct_fc1);
        push_linear(&mut out, "critic.direct.fc2", &mut self.direct_fc2);
        push_linear(&mut out, "critic.output", &mut self.output);
        out
    }

    fn zeros_like(&self) -> Self {
        CriticNetwork {
            cfg: self.cfg.clone(),
            bone_incidence: self.bone_incidence.clone(),
            kcs_fc1: self.kcs_fc1.as_ref().map(|l| Linear::zeros(l.outputs(), l.inputs())),
            kcs_fc2: self.kcs_fc2.as_ref().map(|l| Linear::zeros(l.outputs(), l.inputs())),
            direct_fc1: Linear::zeros(self.direct_fc1.outputs(), self.direct_fc1.inputs()),
            direct_fc2: Linear::zeros(self.direct_fc2.outputs(), self.direct_fc2.inputs()),
            output: Linear::zeros(self.output.outputs(), self.output.inputs()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::init_critic;
    use approx::assert_relative_eq;

    fn small_skeleton() -> SkeletonSpec {
        // 4 joints in a chain, one symmetric pair is irrelevant here
        SkeletonSpec {
            joint_names: ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect(),
            bones: vec![(1, 0), (2, 1), (3, 2)],
            left_right_pairs: vec![],
            root_index: 0,
            spine_index: None,
        }
    }

    fn small_cfg(kcs: bool) -> CriticConfig {
        CriticConfig {
            joints: 4,
            kcs_enabled: kcs,
            kcs_width: 6,
            direct_width: 5,
            leaky_slope: 0.2,
        }
    }

    #[test]
    fn zero_parameters_give_zero_critic_value() {
        let critic = CriticNetwork::new(CriticConfig::new(17), &SkeletonSpec::h36m17()).unwrap();
        let pose: Vec<f64> = (0..51).map(|i| i as f64 * 3.3).collect();
        assert_eq!(critic.forward_one(&pose).unwrap(), 0.0);
    }

    #[test]
    fn disabled_kcs_path_leaves_only_direct_features() {
        let skel = small_skeleton();
        let mut critic = init_critic(&small_cfg(false), &skel, 3).unwrap();
        assert!(critic.kcs_fc1.is_none());
        // zero the direct path: the critic output collapses to its bias for
        // any input, demonstrating nothing else feeds the value
        critic.direct_fc1.w.fill(0.0);
        critic.direct_fc1.b.fill(0.0);
        let pose_a: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect();
        let pose_b: Vec<f64> = (0..12).map(|i| (i as f64 * 7.7).cos()).collect();
        let ya = critic.forward_one(&pose_a).unwrap();
        let yb = critic.forward_one(&pose_b).unwrap();
        assert_relative_eq!(ya, yb, epsilon = 1e-12);
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        for kcs in [true, false] {
            let skel = small_skeleton();
            let critic = init_critic(&small_cfg(kcs), &skel, 7).unwrap();
            let x = Mat::from_fn(12, 3, |r, c| ((r * 3 + c) as f64 * 0.47).sin());
            let (_, cache) = critic.forward(&x).unwrap();
            let ones = Mat::from_element(1, 3, 1.0);
            let grad = critic.backward(&cache, &ones, None);

            let step = 1e-5;
            for i in 0..36 {
                let mut xp = x.clone();
                xp.as_mut_slice()[i] += step;
                let mut xm = x.clone();
                xm.as_mut_slice()[i] -= step;
                let yp = critic.forward(&xp).unwrap().0.sum();
                let ym = critic.forward(&xm).unwrap().0.sum();
                let fd = (yp - ym) / (2.0 * step);
                assert_relative_eq!(grad.as_slice()[i], fd, max_relative = 1e-4, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        let skel = small_skeleton();
        let critic = init_critic(&small_cfg(true), &skel, 9).unwrap();
        let x = Mat::from_fn(12, 4, |r, c| ((r + 5 * c) as f64 * 0.31).cos());

        // objective: sum of critic values over the batch
        let (_, cache) = critic.forward(&x).unwrap();
        let ones = Mat::from_element(1, 4, 1.0);
        let mut grads = critic.zeros_like();
        critic.backward(&cache, &ones, Some(&mut grads));

        let step = 1e-6;
        let grad_views = grads.tensors();
        for (t_idx, view) in grad_views.iter().enumerate() {
            for e_idx in (0..view.data.len()).step_by(3) {
                let mut plus = critic.clone();
                plus.tensors_mut()[t_idx].data[e_idx] += step;
                let mut minus = critic.clone();
                minus.tensors_mut()[t_idx].data[e_idx] -= step;
                let fd = (plus.forward(&x).unwrap().0.sum() - minus.forward(&x).unwrap().0.sum())
                    / (2.0 * step);
                assert_relative_eq!(view.data[e_idx], fd, max_relative = 1e-5, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn exactly_linear_unit_norm_critic_has_zero_penalty() {
        // slope 1 makes the activations the identity; unit selector weights
        // compose to a critic with input gradient e0, norm exactly 1
        let skel = small_skeleton();
        let mut cfg = small_cfg(false);
        cfg.leaky_slope = 1.0;
        let mut critic = CriticNetwork::new(cfg, &skel).unwrap();
        critic.direct_fc1.w[(0, 0)] = 1.0;
        critic.direct_fc2.w[(0, 0)] = 1.0;
        critic.output.w[(0, 0)] = 1.0;
        let x = Mat::from_fn(12, 5, |r, c| ((r * 7 + c) as f64 * 0.13).sin());
        let penalty = critic.gradient_penalty(&x, 10.0, None).unwrap();
        assert_relative_eq!(penalty, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn gradient_penalty_matches_hand_unrolled_oracle() {
        // direct-path critic: y = w_oᵀ·φ(W₂·φ(W₁x + b₁) + b₂) + b_o
        // g = W₁ᵀ D₁ W₂ᵀ D₂ w_o with D_i = diag(φ'(z_i))
        // p = (‖g‖ − 1)², ∂p/∂θ = ∇_θ ⟨g, v⟩ with v = 2(‖g‖−1)·g/‖g‖:
        //   ∂/∂W₁ = D₁W₂ᵀD₂w_o · vᵀ
        //   ∂/∂W₂ = D₂w_o · (D₁W₁v)ᵀ
        //   ∂/∂w_o = D₂W₂D₁W₁v
        let skel = small_skeleton();
        let critic = init_critic(&small_cfg(false), &skel, 13).unwrap();
        let x = Mat::from_fn(12, 1, |r, _| ((r as f64) * 0.71).sin());
        let slope = 0.2;

        let mut grads = critic.zeros_like();
        let penalty = critic.gradient_penalty(&x, 1.0, Some(&mut grads)).unwrap();

        let w1 = &critic.direct_fc1.w;
        let b1 = &critic.direct_fc1.b;
        let w2 = &critic.direct_fc2.w;
        let b2 = &critic.direct_fc2.b;
        let wo = critic.output.w.row(0).transpose();

        let z1 = w1 * &x.column(0).clone_owned() + b1;
        let d1 = z1.map(|v| if v >= 0.0 { 1.0 } else { slope });
        let a1 = z1.zip_map(&d1, |z, d| z * d);
        let z2 = w2 * a1 + b2;
        let d2 = z2.map(|v| if v >= 0.0 { 1.0 } else { slope });

        let d2wo = d2.component_mul(&wo);
        let g = w1.tr_mul(&d1.component_mul(&(w2.tr_mul(&d2wo))));
        let norm = g.norm();
        let expect_penalty = (norm - 1.0) * (norm - 1.0);
        assert_relative_eq!(penalty, expect_penalty, max_relative = 1e-12);

        let v = &g * (2.0 * (norm - 1.0) / norm);
        let dw1_hand = d1.component_mul(&w2.tr_mul(&d2wo)) * v.transpose();
        let dw2_hand = &d2wo * (d1.component_mul(&(w1 * &v))).transpose();
        let dwo_hand = d2.component_mul(&(w2 * d1.component_mul(&(w1 * &v))));

        for (a, b) in grads.direct_fc1.w.iter().zip(dw1_hand.iter()) {
            assert_relative_eq!(*a, *b, max_relative = 1e-10, epsilon = 1e-12);
        }
        for (a, b) in grads.direct_fc2.w.iter().zip(dw2_hand.iter()) {
            assert_relative_eq!(*a, *b, max_relative = 1e-10, epsilon = 1e-12);
        }
        for (a, b) in grads.output.w.iter().zip(dwo_hand.iter()) {
            assert_relative_eq!(*a, *b, max_relative = 1e-10, epsilon = 1e-12);
        }
        // the penalty leaves biases untouched for piecewise-linear critics
        assert!(grads.direct_fc1.b.iter().all(|&v| v == 0.0));
        assert!(grads.output.b.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_penalty_parameter_gradient_matches_finite_differences() {
        for kcs in [true, false] {
            let skel = small_skeleton();
            let critic = init_critic(&small_cfg(kcs), &skel, 17).unwrap();
            let x = Mat::from_fn(12, 3, |r, c| ((r * 2 + c) as f64 * 0.43).cos() * 0.8);
            let gp_weight = 10.0;

            let mut grads = critic.zeros_like();
            critic.gradient_penalty(&x, gp_weight, Some(&mut grads)).unwrap();

            let objective = |c: &CriticNetwork| -> f64 {
                gp_weight * c.gradient_penalty(&x, gp_weight, None).unwrap()
            };
            let step = 1e-6;
            let grad_views = grads.tensors();
            for (t_idx, view) in grad_views.iter().enumerate() {
                for e_idx in (0..view.data.len()).step_by(5) {
                    let mut plus = critic.clone();
                    plus.tensors_mut()[t_idx].data[e_idx] += step;
                    let mut minus = critic.clone();
                    minus.tensors_mut()[t_idx].data[e_idx] -= step;
                    let fd = (objective(&plus) - objective(&minus)) / (2.0 * step);
                    assert_relative_eq!(
                        view.data[e_idx],
                        fd,
                        max_relative = 2e-4,
                        epsilon = 1e-7
                    );
                }
            }
        }
    }
}
