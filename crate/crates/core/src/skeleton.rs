//! Skeleton topology, bone algebra, the KCS matrix, Procrustes alignment and
//! the left/right symmetry error.
//!
//! Poses are column matrices: a 3D pose is a `3×n` matrix whose column `j`
//! holds the millimeter coordinates of joint `j`; a 2D pose is the `2×n`
//! image-plane analogue plus a per-joint visibility mask.

use nalgebra::{DMatrix, Matrix2xX, Matrix3, Matrix3xX, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norms below this are treated as a degenerate (all joints coincident) pose.
const DEGENERACY_EPS: f64 = 1e-9;

// ---------------------------------------------------------------------------
// Skeleton description
// ---------------------------------------------------------------------------

/// Static description of a skeleton: joint names, directed bones, the
/// left/right bone pairs used by the symmetry error, the root joint used for
/// centering and an optional never-detected joint (the spine column for the
/// default skeleton).
///
/// Serializable as a TOML document so datasets and checkpoints can carry the
/// topology they were built against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonSpec {
    pub joint_names: Vec<String>,
    /// Directed bones `(r, t)`: the bone vector is `joint[r] - joint[t]`.
    pub bones: Vec<(usize, usize)>,
    /// Pairs of bone indices `(left, right)` compared by the symmetry error.
    pub left_right_pairs: Vec<(usize, usize)>,
    pub root_index: usize,
    /// Joint that 2D detectors never report; masked throughout the pipeline.
    pub spine_index: Option<usize>,
}

impl SkeletonSpec {
    /// The default 17-joint skeleton in Human3.6M order: 16 visible joints
    /// plus the spine joint, which 2D detectors do not report.
    pub fn h36m17() -> Self {
        let joint_names = [
            "pelvis",         // 0 (root)
            "spine",          // 1 (never detected)
            "neck",           // 2
            "head",           // 3
            "head_top",       // 4
            "left_shoulder",  // 5
            "left_elbow",     // 6
            "left_wrist",     // 7
            "right_shoulder", // 8
            "right_elbow",    // 9
            "right_wrist",    // 10
            "left_hip",       // 11
            "left_knee",      // 12
            "left_ankle",     // 13
            "right_hip",      // 14
            "right_knee",     // 15
            "right_ankle",    // 16
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();

        // child ← parent; bone vector points from parent to child
        let bones = vec![
            (1, 0),   // 0  pelvis → spine
            (2, 1),   // 1  spine → neck
            (3, 2),   // 2  neck → head
            (4, 3),   // 3  head → head_top
            (5, 2),   // 4  neck → left_shoulder
            (6, 5),   // 5  left upper arm
            (7, 6),   // 6  left lower arm
            (8, 2),   // 7  neck → right_shoulder
            (9, 8),   // 8  right upper arm
            (10, 9),  // 9  right lower arm
            (11, 0),  // 10 pelvis → left_hip
            (12, 11), // 11 left upper leg
            (13, 12), // 12 left lower leg
            (14, 0),  // 13 pelvis → right_hip
            (15, 14), // 14 right upper leg
            (16, 15), // 15 right lower leg
        ];

        // upper/lower arms and legs, left vs right
        let left_right_pairs = vec![(5, 8), (6, 9), (11, 14), (12, 15)];

        SkeletonSpec {
            joint_names,
            bones,
            left_right_pairs,
            root_index: 0,
            spine_index: Some(1),
        }
    }

    pub fn n_joints(&self) -> usize {
        self.joint_names.len()
    }

    pub fn n_bones(&self) -> usize {
        self.bones.len()
    }

    /// Checks the structural invariants; called on every deserialized spec.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_joints();
        if n == 0 {
            return Err(Error::InvalidConfig("skeleton has no joints".into()));
        }
        if self.root_index >= n {
            return Err(Error::InvalidConfig(format!(
                "root index {} out of range for {} joints",
                self.root_index, n
            )));
        }
        if let Some(s) = self.spine_index {
            if s >= n {
                return Err(Error::InvalidConfig(format!(
                    "spine index {s} out of range for {n} joints"
                )));
            }
        }
        for (k, &(r, t)) in self.bones.iter().enumerate() {
            if r >= n || t >= n {
                return Err(Error::InvalidConfig(format!(
                    "bone {k} references joint out of range ({r}, {t})"
                )));
            }
            if r == t {
                return Err(Error::InvalidConfig(format!(
                    "bone {k} references the same joint twice ({r})"
                )));
            }
        }
        let b = self.n_bones();
        let mut seen = vec![false; b];
        for &(l, r) in &self.left_right_pairs {
            if l >= b || r >= b {
                return Err(Error::InvalidConfig(format!(
                    "symmetry pair ({l}, {r}) references bone out of range"
                )));
            }
            if seen[l] || seen[r] || l == r {
                return Err(Error::InvalidConfig(
                    "symmetry pairs must be pairwise disjoint".into(),
                ));
            }
            seen[l] = true;
            seen[r] = true;
        }
        Ok(())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.joint_names.iter().position(|j| j == name)
    }

    /// The four anchor joints used for template alignment:
    /// `[left_shoulder, right_shoulder, left_hip, right_hip]`.
    pub fn shoulder_hip_indices(&self) -> Result<[usize; 4]> {
        let mut out = [0usize; 4];
        for (slot, name) in ["left_shoulder", "right_shoulder", "left_hip", "right_hip"]
            .iter()
            .enumerate()
        {
            out[slot] = self.index_of(name).ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "skeleton has no joint named '{name}' (required for template alignment)"
                ))
            })?;
        }
        Ok(out)
    }

    /// Per-joint mask: `true` where the joint can be observed by a detector.
    pub fn detectable_mask(&self) -> Vec<bool> {
        let mut mask = vec![true; self.n_joints()];
        if let Some(s) = self.spine_index {
            mask[s] = false;
        }
        mask
    }

    /// Joint indices kept by evaluation (everything but the never-detected joint).
    pub fn evaluated_joints(&self) -> Vec<usize> {
        (0..self.n_joints())
            .filter(|&j| Some(j) != self.spine_index)
            .collect()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: SkeletonSpec =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }
}

// ---------------------------------------------------------------------------
// Pose types
// ---------------------------------------------------------------------------

/// A 3D pose: `3×n` matrix of joint coordinates in millimeters.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose3D {
    coords: Matrix3xX<f64>,
}

impl Pose3D {
    pub fn new(coords: Matrix3xX<f64>) -> Result<Self> {
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("3D pose coordinates".into()));
        }
        Ok(Pose3D { coords })
    }

    /// Builds a pose from a flat `3n` vector laid out joint-major
    /// `(x0, y0, z0, x1, y1, z1, ...)`.
    pub fn from_flat(values: &[f64]) -> Result<Self> {
        if values.len() % 3 != 0 {
            return Err(Error::DimensionMismatch {
                context: "flat 3D pose",
                expected: 3 * (values.len() / 3 + 1),
                actual: values.len(),
            });
        }
        Pose3D::new(Matrix3xX::from_column_slice(values))
    }

    pub fn coords(&self) -> &Matrix3xX<f64> {
        &self.coords
    }

    pub fn n_joints(&self) -> usize {
        self.coords.ncols()
    }

    pub fn joint(&self, j: usize) -> Vector3<f64> {
        self.coords.column(j).into()
    }

    /// Flat joint-major layout, the transport format for networks and files.
    pub fn to_flat(&self) -> Vec<f64> {
        self.coords.as_slice().to_vec()
    }

    /// Subtracts the root joint from every column; the root column becomes zero.
    pub fn root_centered(&self, root_index: usize) -> Pose3D {
        let root: Vector3<f64> = self.coords.column(root_index).into();
        let mut coords = self.coords.clone();
        for mut col in coords.column_iter_mut() {
            col -= root;
        }
        Pose3D { coords }
    }

    /// Returns a copy with the given joint column set to zero.
    pub fn with_zeroed_joint(&self, joint: usize) -> Pose3D {
        let mut coords = self.coords.clone();
        coords.column_mut(joint).fill(0.0);
        Pose3D { coords }
    }

    /// Restricts the pose to the given joints, in the given order.
    pub fn select_joints(&self, joints: &[usize]) -> Pose3D {
        let mut coords = Matrix3xX::zeros(joints.len());
        for (k, &j) in joints.iter().enumerate() {
            coords.set_column(k, &self.coords.column(j));
        }
        Pose3D { coords }
    }

    /// Applies `scale * rot` to every joint.
    pub fn transformed(&self, rot: &Matrix3<f64>, scale: f64) -> Pose3D {
        Pose3D {
            coords: Matrix3xX::from((rot * &self.coords) * scale),
        }
    }
}

/// A 2D pose: `2×n` matrix of image-plane coordinates plus a visibility mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose2D {
    coords: Matrix2xX<f64>,
    visibility: Vec<bool>,
}

impl Pose2D {
    pub fn new(coords: Matrix2xX<f64>, visibility: Vec<bool>) -> Result<Self> {
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("2D pose coordinates".into()));
        }
        if visibility.len() != coords.ncols() {
            return Err(Error::DimensionMismatch {
                context: "2D pose visibility mask",
                expected: coords.ncols(),
                actual: visibility.len(),
            });
        }
        Ok(Pose2D { coords, visibility })
    }

    pub fn fully_visible(coords: Matrix2xX<f64>) -> Result<Self> {
        let n = coords.ncols();
        Pose2D::new(coords, vec![true; n])
    }

    pub fn coords(&self) -> &Matrix2xX<f64> {
        &self.coords
    }

    pub fn visibility(&self) -> &[bool] {
        &self.visibility
    }

    pub fn n_joints(&self) -> usize {
        self.coords.ncols()
    }

    pub fn visible_count(&self) -> usize {
        self.visibility.iter().filter(|&&v| v).count()
    }

    pub fn is_visible(&self, j: usize) -> bool {
        self.visibility[j]
    }

    pub fn set_coords(&mut self, coords: Matrix2xX<f64>) -> Result<()> {
        if coords.ncols() != self.visibility.len() {
            return Err(Error::DimensionMismatch {
                context: "2D pose coordinates",
                expected: self.visibility.len(),
                actual: coords.ncols(),
            });
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("2D pose coordinates".into()));
        }
        self.coords = coords;
        Ok(())
    }

    /// Intersects the mask with `detectable` (joints a detector can report).
    pub fn masked_by(&self, detectable: &[bool]) -> Pose2D {
        let visibility = self
            .visibility
            .iter()
            .zip(detectable)
            .map(|(&v, &d)| v && d)
            .collect();
        Pose2D {
            coords: self.coords.clone(),
            visibility,
        }
    }

    /// Flat joint-major layout `(x0, y0, x1, y1, ...)` with invisible joints
    /// zero-filled; the network input convention.
    pub fn to_zero_filled_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.n_joints());
        for j in 0..self.n_joints() {
            if self.visibility[j] {
                out.push(self.coords[(0, j)]);
                out.push(self.coords[(1, j)]);
            } else {
                out.push(0.0);
                out.push(0.0);
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Bone algebra
// ---------------------------------------------------------------------------

/// Joint-to-bone incidence matrix: `n×b` with one `+1` (row `r`) and one `-1`
/// (row `t`) per column, so `pose · map` stacks the bone vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct BoneMap {
    matrix: DMatrix<f64>,
}

impl BoneMap {
    pub fn from_spec(spec: &SkeletonSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.n_joints();
        let b = spec.n_bones();
        let mut matrix = DMatrix::zeros(n, b);
        for (k, &(r, t)) in spec.bones.iter().enumerate() {
            matrix[(r, k)] = 1.0;
            matrix[(t, k)] = -1.0;
        }
        Ok(BoneMap { matrix })
    }

    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        for k in 0..matrix.ncols() {
            let col = matrix.column(k);
            let plus = col.iter().filter(|&&v| v == 1.0).count();
            let minus = col.iter().filter(|&&v| v == -1.0).count();
            let zero = col.iter().filter(|&&v| v == 0.0).count();
            if plus != 1 || minus != 1 || plus + minus + zero != matrix.nrows() {
                return Err(Error::InvalidConfig(format!(
                    "bone map column {k} is not a (+1, -1) incidence column"
                )));
            }
        }
        Ok(BoneMap { matrix })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn n_joints(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_bones(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Gram matrix of the bone vectors (`b×b`, mm²): squared bone lengths on the
/// diagonal, scaled inter-bone angles off it.
#[derive(Debug, Clone, PartialEq)]
pub struct KcsMatrix {
    matrix: DMatrix<f64>,
}

impl KcsMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Squared length of bone `k`.
    pub fn squared_length(&self, k: usize) -> f64 {
        self.matrix[(k, k)]
    }

    pub fn n_bones(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Stacks the bone vectors of `pose` into a `3×b` matrix.
pub fn bone_matrix(pose: &Pose3D, bmap: &BoneMap) -> Result<Matrix3xX<f64>> {
    if pose.n_joints() != bmap.n_joints() {
        return Err(Error::DimensionMismatch {
            context: "bone matrix",
            expected: bmap.n_joints(),
            actual: pose.n_joints(),
        });
    }
    Ok(Matrix3xX::from(pose.coords() * bmap.matrix()))
}

/// Computes the KCS matrix `Bᵀ·B` of the pose's bone vectors.
pub fn kcs(pose: &Pose3D, bmap: &BoneMap) -> Result<KcsMatrix> {
    let bones = bone_matrix(pose, bmap)?;
    Ok(KcsMatrix {
        matrix: DMatrix::from(bones.transpose() * bones),
    })
}

// ---------------------------------------------------------------------------
// Procrustes alignment
// ---------------------------------------------------------------------------

/// Result of a similarity fit: `aligned = scale * rotation * estimate`.
#[derive(Debug, Clone)]
pub struct Alignment {
    pub aligned: Pose3D,
    pub rotation: Matrix3<f64>,
    pub scale: f64,
}

/// Finds the proper rotation and uniform scale minimizing the Frobenius
/// distance `‖s·R·estimate − reference‖`. Poses are expected root-centered,
/// so no translation is fitted.
pub fn procrustes_align(estimate: &Pose3D, reference: &Pose3D) -> Result<Alignment> {
    if estimate.n_joints() != reference.n_joints() {
        return Err(Error::DimensionMismatch {
            context: "procrustes alignment",
            expected: reference.n_joints(),
            actual: estimate.n_joints(),
        });
    }
    let (rotation, scale) = similarity_fit(estimate.coords(), reference.coords())?;
    Ok(Alignment {
        aligned: estimate.transformed(&rotation, scale),
        rotation,
        scale,
    })
}

/// Fits rotation and scale on the four shoulder/hip anchor joints only, then
/// applies the transform to every joint.
pub fn align_to_template(pose: &Pose3D, template: &Pose3D, anchors: &[usize]) -> Result<Pose3D> {
    if pose.n_joints() != template.n_joints() {
        return Err(Error::DimensionMismatch {
            context: "template alignment",
            expected: template.n_joints(),
            actual: pose.n_joints(),
        });
    }
    for &a in anchors {
        if a >= pose.n_joints() {
            return Err(Error::DimensionMismatch {
                context: "template alignment anchors",
                expected: pose.n_joints(),
                actual: a,
            });
        }
    }
    let sub_pose = pose.select_joints(anchors);
    let sub_template = template.select_joints(anchors);
    let (rotation, scale) = similarity_fit(sub_pose.coords(), sub_template.coords())?;
    Ok(pose.transformed(&rotation, scale))
}

/// Kabsch-style closed-form similarity fit with reflection correction.
fn similarity_fit(estimate: &Matrix3xX<f64>, reference: &Matrix3xX<f64>) -> Result<(Matrix3<f64>, f64)> {
    let spread = |m: &Matrix3xX<f64>| -> f64 {
        let centroid = m.column_mean();
        m.column_iter()
            .map(|c| (c - centroid).norm_squared())
            .sum::<f64>()
            .sqrt()
    };
    if spread(reference) < DEGENERACY_EPS {
        return Err(Error::Degenerate(
            "procrustes reference has no spread (all joints coincident)".into(),
        ));
    }
    if spread(estimate) < DEGENERACY_EPS {
        return Err(Error::Degenerate(
            "procrustes estimate has no spread (all joints coincident)".into(),
        ));
    }
    let est_norm_sq = estimate.iter().map(|v| v * v).sum::<f64>();

    let cross: Matrix3<f64> = Matrix3::from(reference * estimate.transpose());
    let svd = cross.svd(true, true);
    let u = svd.u.expect("svd of 3x3 always yields u");
    let v_t = svd.v_t.expect("svd of 3x3 always yields v_t");
    let mut sigma = svd.singular_values;

    let mut u = u;
    if (u * v_t).determinant() < 0.0 {
        // flip the column of U paired with the smallest singular value
        let (min_idx, _) = sigma
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &s)| {
                if s < acc.1 {
                    (i, s)
                } else {
                    acc
                }
            });
        for r in 0..3 {
            u[(r, min_idx)] = -u[(r, min_idx)];
        }
        sigma[min_idx] = -sigma[min_idx];
    }

    let rotation = u * v_t;
    let scale = sigma.iter().sum::<f64>() / est_norm_sq;
    Ok((rotation, scale))
}

// ---------------------------------------------------------------------------
// Symmetry error
// ---------------------------------------------------------------------------

/// Sum over the skeleton's left/right limb-bone pairs of the absolute
/// difference in bone length, in millimeters.
pub fn symmetry_error(pose: &Pose3D, spec: &SkeletonSpec) -> Result<f64> {
    if pose.n_joints() != spec.n_joints() {
        return Err(Error::DimensionMismatch {
            context: "symmetry error",
            expected: spec.n_joints(),
            actual: pose.n_joints(),
        });
    }
    let mut total = 0.0;
    for &(l, r) in &spec.left_right_pairs {
        let len = |k: usize| {
            let (c, p) = spec.bones[k];
            (pose.joint(c) - pose.joint(p)).norm()
        };
        total += (len(l) - len(r)).abs();
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use crate::testutil::{random_pose, random_rotation};

    #[test]
    fn default_spec_is_valid_and_sized() {
        let spec = SkeletonSpec::h36m17();
        spec.validate().unwrap();
        assert_eq!(spec.n_joints(), 17);
        assert_eq!(spec.n_bones(), 16);
        assert_eq!(spec.left_right_pairs.len(), 4);
        assert_eq!(spec.spine_index, Some(1));
        assert_eq!(spec.detectable_mask().iter().filter(|&&v| v).count(), 16);
    }

    #[test]
    fn spec_toml_round_trip() {
        let spec = SkeletonSpec::h36m17();
        let text = spec.to_toml().unwrap();
        let back = SkeletonSpec::from_toml(&text).unwrap();
        assert_eq!(spec, back);
    }

    #[test]
    fn spec_rejects_overlapping_symmetry_pairs() {
        let mut spec = SkeletonSpec::h36m17();
        spec.left_right_pairs = vec![(5, 8), (5, 9)];
        assert!(matches!(spec.validate(), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn bone_matrix_two_joint_case() {
        // p1=(0,0,0), p2=(2,0,0), one bone (r=0, t=1) → column p1 - p2 = (-2,0,0)
        let pose = Pose3D::from_flat(&[0.0, 0.0, 0.0, 2.0, 0.0, 0.0]).unwrap();
        let bmap = BoneMap::new(DMatrix::from_column_slice(2, 1, &[1.0, -1.0])).unwrap();
        let bones = bone_matrix(&pose, &bmap).unwrap();
        assert_eq!(bones.column(0), Vector3::new(-2.0, 0.0, 0.0));
    }

    #[test]
    fn bone_matrix_zero_pose() {
        let spec = SkeletonSpec::h36m17();
        let bmap = BoneMap::from_spec(&spec).unwrap();
        let pose = Pose3D::new(Matrix3xX::zeros(17)).unwrap();
        let bones = bone_matrix(&pose, &bmap).unwrap();
        assert!(bones.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bone_matrix_matches_per_bone_subtraction() {
        let spec = SkeletonSpec::h36m17();
        let bmap = BoneMap::from_spec(&spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pose = random_pose(&mut rng, 17, 500.0);
        let bones = bone_matrix(&pose, &bmap).unwrap();
        for (k, &(r, t)) in spec.bones.iter().enumerate() {
            let expect = pose.joint(r) - pose.joint(t);
            assert_relative_eq!(Vector3::from(bones.column(k)), expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn bone_matrix_rejects_mismatched_pose() {
        let spec = SkeletonSpec::h36m17();
        let bmap = BoneMap::from_spec(&spec).unwrap();
        let pose = Pose3D::new(Matrix3xX::zeros(5)).unwrap();
        assert!(matches!(
            bone_matrix(&pose, &bmap),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn kcs_single_bone() {
        // one bone of length 2 along x → Ψ = [[4]]
        let pose = Pose3D::from_flat(&[0.0, 0.0, 0.0, 2.0, 0.0, 0.0]).unwrap();
        let bmap = BoneMap::new(DMatrix::from_column_slice(2, 1, &[-1.0, 1.0])).unwrap();
        let psi = kcs(&pose, &bmap).unwrap();
        assert_relative_eq!(psi.matrix()[(0, 0)], 4.0, epsilon = 1e-12);
    }

    #[test]
    fn kcs_orthogonal_unit_bones() {
        // joints 0=(0,0,0), 1=(1,0,0), 2=(1,1,0); bones 1-0 and 2-1 → Ψ = I
        let pose = Pose3D::from_flat(&[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        let bmap = BoneMap::new(DMatrix::from_column_slice(
            3,
            2,
            &[-1.0, 1.0, 0.0, 0.0, -1.0, 1.0],
        ))
        .unwrap();
        let psi = kcs(&pose, &bmap).unwrap();
        assert_relative_eq!(psi.matrix().clone(), DMatrix::identity(2, 2), epsilon = 1e-12);
    }

    #[test]
    fn kcs_matches_entrywise_dot_products() {
        let spec = SkeletonSpec::h36m17();
        let bmap = BoneMap::from_spec(&spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let pose = random_pose(&mut rng, 17, 400.0);
        let psi = kcs(&pose, &bmap).unwrap();
        let bones = bone_matrix(&pose, &bmap).unwrap();
        for j in 0..16 {
            for k in 0..16 {
                let expect = bones.column(j).dot(&bones.column(k));
                assert_relative_eq!(psi.matrix()[(j, k)], expect, max_relative = 1e-9, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn procrustes_identity_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pose = random_pose(&mut rng, 17, 300.0).root_centered(0);
        let fit = procrustes_align(&pose, &pose).unwrap();
        assert_relative_eq!(fit.scale, 1.0, epsilon = 1e-9);
        assert_relative_eq!(fit.rotation, Matrix3::identity(), epsilon = 1e-9);
        for j in 0..17 {
            assert_relative_eq!(fit.aligned.joint(j), pose.joint(j), epsilon = 1e-9);
        }
    }

    #[test]
    fn procrustes_recovers_exact_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pose = random_pose(&mut rng, 17, 300.0).root_centered(0);
        // rotate 90° about z and double
        let rot = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let target = pose.transformed(&rot, 2.0);
        let fit = procrustes_align(&pose, &target).unwrap();
        let residual: f64 = (0..17)
            .map(|j| (fit.aligned.joint(j) - target.joint(j)).norm())
            .sum::<f64>()
            / 17.0;
        assert!(residual < 1e-9, "residual {residual}");
    }

    #[test]
    fn procrustes_beats_random_similarity_transforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_pose(&mut rng, 17, 300.0).root_centered(0);
        let b = random_pose(&mut rng, 17, 300.0).root_centered(0);
        let fit = procrustes_align(&a, &b).unwrap();
        let frob = |p: &Pose3D| -> f64 {
            (p.coords() - b.coords()).iter().map(|v| v * v).sum::<f64>()
        };
        let best = frob(&fit.aligned);
        for _ in 0..1000 {
            let rot = random_rotation(&mut rng);
            let scale = 0.25 + 3.0 * rng.random::<f64>();
            let candidate = a.transformed(&rot, scale);
            assert!(frob(&candidate) >= best - 1e-9);
        }
    }

    #[test]
    fn procrustes_rejects_degenerate_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pose = random_pose(&mut rng, 17, 300.0);
        let flat = Pose3D::new(Matrix3xX::zeros(17)).unwrap();
        assert!(matches!(
            procrustes_align(&pose, &flat),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn template_alignment_identity_and_rotation() {
        let spec = SkeletonSpec::h36m17();
        let anchors = spec.shoulder_hip_indices().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let template = random_pose(&mut rng, 17, 300.0).root_centered(0);

        let same = align_to_template(&template, &template, &anchors).unwrap();
        for j in 0..17 {
            assert_relative_eq!(same.joint(j), template.joint(j), epsilon = 1e-9);
        }

        // rotation about the vertical axis is undone exactly on the anchors
        let angle: f64 = 1.1;
        let rot = Matrix3::new(
            angle.cos(),
            0.0,
            angle.sin(),
            0.0,
            1.0,
            0.0,
            -angle.sin(),
            0.0,
            angle.cos(),
        );
        let rotated = template.transformed(&rot, 1.0);
        let aligned = align_to_template(&rotated, &template, &anchors).unwrap();
        for &a in &anchors {
            assert_relative_eq!(aligned.joint(a), template.joint(a), epsilon = 1e-9);
        }
    }

    #[test]
    fn template_alignment_matches_restricted_procrustes() {
        let spec = SkeletonSpec::h36m17();
        let anchors = spec.shoulder_hip_indices().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let template = random_pose(&mut rng, 17, 300.0).root_centered(0);
        let pose = random_pose(&mut rng, 17, 300.0).root_centered(0);

        let aligned = align_to_template(&pose, &template, &anchors).unwrap();
        let fit = procrustes_align(
            &pose.select_joints(&anchors),
            &template.select_joints(&anchors),
        )
        .unwrap();
        let expect = pose.transformed(&fit.rotation, fit.scale);
        for j in 0..17 {
            assert_relative_eq!(aligned.joint(j), expect.joint(j), epsilon = 1e-9);
        }
    }

    #[test]
    fn template_alignment_rejects_coincident_anchors() {
        let spec = SkeletonSpec::h36m17();
        let anchors = spec.shoulder_hip_indices().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let template = random_pose(&mut rng, 17, 300.0);
        let mut coords = Matrix3xX::zeros(17);
        for j in 0..17 {
            coords.set_column(j, &Vector3::new(5.0, 5.0, 5.0).column(0));
        }
        // anchors all coincide after centering on themselves
        let degenerate = Pose3D::new(coords).unwrap();
        assert!(matches!(
            align_to_template(&degenerate, &template, &anchors),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn symmetry_error_of_mirrored_pose_is_zero() {
        let spec = SkeletonSpec::h36m17();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut pose = random_pose(&mut rng, 17, 300.0);
        // mirror the right side from the left so paired bone lengths match
        let mut coords = pose.coords().clone();
        for (l, r) in [(5, 8), (6, 9), (7, 10), (11, 14), (12, 15), (13, 16)] {
            let mut col = coords.column(l).clone_owned();
            col[0] = -col[0];
            coords.set_column(r, &col);
        }
        pose = Pose3D::new(coords).unwrap();
        let err = symmetry_error(&pose, &spec).unwrap();
        assert_relative_eq!(err, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn symmetry_error_single_pair_perturbation() {
        let spec = SkeletonSpec::h36m17();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let pose = {
            let mut coords = random_pose(&mut rng, 17, 300.0).coords().clone();
            for (l, r) in [(5, 8), (6, 9), (7, 10), (11, 14), (12, 15), (13, 16)] {
                let mut col = coords.column(l).clone_owned();
                col[0] = -col[0];
                coords.set_column(r, &col);
            }
            Pose3D::new(coords).unwrap()
        };
        // lengthen the left lower arm (bone 6: wrist ← elbow) by 5 mm
        let (wrist, elbow) = spec.bones[6];
        let dir = (pose.joint(wrist) - pose.joint(elbow)).normalize();
        let mut coords = pose.coords().clone();
        let new_wrist = pose.joint(wrist) + dir * 5.0;
        coords.set_column(wrist, &new_wrist.column(0));
        let perturbed = Pose3D::new(coords).unwrap();
        let err = symmetry_error(&perturbed, &spec).unwrap();
        assert_relative_eq!(err, 5.0, epsilon = 1e-9);
    }

    #[test]
    fn symmetry_error_invariant_under_rigid_transform() {
        let spec = SkeletonSpec::h36m17();
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let pose = random_pose(&mut rng, 17, 300.0);
        let base = symmetry_error(&pose, &spec).unwrap();
        for _ in 0..20 {
            let rot = random_rotation(&mut rng);
            let moved = pose.transformed(&rot, 1.0);
            let err = symmetry_error(&moved, &spec).unwrap();
            assert_relative_eq!(err, base, max_relative = 1e-9, epsilon = 1e-9);
        }
    }

    #[test]
    fn kcs_rotation_and_scale_invariants() {
        let spec = SkeletonSpec::h36m17();
        let bmap = BoneMap::from_spec(&spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let pose = random_pose(&mut rng, 17, 400.0);
        let base = kcs(&pose, &bmap).unwrap();
        for _ in 0..10 {
            let rot = random_rotation(&mut rng);
            let rotated = kcs(&pose.transformed(&rot, 1.0), &bmap).unwrap();
            for (a, b) in rotated.matrix().iter().zip(base.matrix().iter()) {
                assert_relative_eq!(*a, *b, max_relative = 1e-6, epsilon = 1e-6);
            }
        }
        let scaled = kcs(&pose.transformed(&Matrix3::identity(), 3.0), &bmap).unwrap();
        for (a, b) in scaled.matrix().iter().zip(base.matrix().iter()) {
            assert_relative_eq!(*a, 9.0 * b, max_relative = 1e-9, epsilon = 1e-9);
        }
    }
}
