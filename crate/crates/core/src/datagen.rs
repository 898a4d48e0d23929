//! Synthetic articulated-pose generation, data preprocessing, 2D noise
//! injection and the dataset file format.
//!
//! The generator is the desk-scale stand-in for motion-capture training data:
//! it samples joint angles within configured ranges, builds 3D poses by
//! forward kinematics over the default 17-joint skeleton, samples ideal
//! weak-perspective cameras and records the exact `W = K·X` projections, so
//! ground truth achieves zero reprojection and camera loss by construction.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix2xX, Matrix3, Matrix3xX, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::camera::CameraMatrix;
use crate::error::{Error, Result};
use crate::skeleton::{align_to_template, Pose2D, Pose3D, SkeletonSpec};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Inclusive sampling range `[min, max]` in radians (or unitless for scale).
pub type Range = (f64, f64);

/// Per-articulation angle ranges. Left and right limbs sample independently
/// from the same range; collapsing every range to a point yields a fixed pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JointAngleRanges {
    pub torso_tilt: Range,
    pub torso_twist: Range,
    pub head_nod: Range,
    pub shoulder_polar: Range,
    pub shoulder_azimuth: Range,
    pub elbow_flexion: Range,
    pub hip_polar: Range,
    pub hip_azimuth: Range,
    pub knee_flexion: Range,
}

impl Default for JointAngleRanges {
    fn default() -> Self {
        // spans standing, sitting and reaching pose families
        JointAngleRanges {
            torso_tilt: (-0.4, 0.9),
            torso_twist: (-0.6, 0.6),
            head_nod: (-0.4, 0.4),
            shoulder_polar: (0.0, 2.4),
            shoulder_azimuth: (-1.2, 1.2),
            elbow_flexion: (0.0, 2.3),
            hip_polar: (0.0, 1.8),
            hip_azimuth: (-0.5, 0.5),
            knee_flexion: (0.0, 2.1),
        }
    }
}

impl JointAngleRanges {
    /// Every range collapsed to its rest value; the generator then emits the
    /// same upright pose for every sample.
    pub fn rest() -> Self {
        JointAngleRanges {
            torso_tilt: (0.0, 0.0),
            torso_twist: (0.0, 0.0),
            head_nod: (0.0, 0.0),
            shoulder_polar: (0.0, 0.0),
            shoulder_azimuth: (0.0, 0.0),
            elbow_flexion: (0.0, 0.0),
            hip_polar: (0.0, 0.0),
            hip_azimuth: (0.0, 0.0),
            knee_flexion: (0.0, 0.0),
        }
    }

    fn all(&self) -> [(&'static str, Range); 9] {
        [
            ("torso_tilt", self.torso_tilt),
            ("torso_twist", self.torso_twist),
            ("head_nod", self.head_nod),
            ("shoulder_polar", self.shoulder_polar),
            ("shoulder_azimuth", self.shoulder_azimuth),
            ("elbow_flexion", self.elbow_flexion),
            ("hip_polar", self.hip_polar),
            ("hip_azimuth", self.hip_azimuth),
            ("knee_flexion", self.knee_flexion),
        ]
    }
}

/// Configuration for the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticPoseConfig {
    pub seed: u64,
    pub count: usize,
    /// Per-bone lengths in millimeters, ordered like the skeleton's bones.
    pub limb_lengths: Vec<f64>,
    /// Uniform subject-size multiplier applied to every limb length.
    pub limb_scale: f64,
    pub joint_angle_ranges: JointAngleRanges,
    /// Camera elevation above the horizontal, radians.
    pub camera_elevation_range: Range,
    /// Camera azimuth around the subject, radians.
    pub camera_azimuth_range: Range,
    /// Weak-perspective scale; with millimeter poses, ~0.12 puts a standing
    /// subject at roughly 200 px image height.
    pub scale_range: Range,
}

/// Default limb lengths (mm) for the 16 bones of the default skeleton.
pub const DEFAULT_LIMB_LENGTHS: [f64; 16] = [
    220.0, // pelvis → spine
    250.0, // spine → neck
    115.0, // neck → head
    115.0, // head → head_top
    180.0, // neck → left_shoulder
    280.0, // left upper arm
    250.0, // left lower arm
    180.0, // neck → right_shoulder
    280.0, // right upper arm
    250.0, // right lower arm
    130.0, // pelvis → left_hip
    440.0, // left upper leg
    440.0, // left lower leg
    130.0, // pelvis → right_hip
    440.0, // right upper leg
    440.0, // right lower leg
];

impl Default for SyntheticPoseConfig {
    fn default() -> Self {
        SyntheticPoseConfig {
            seed: 0,
            count: 1,
            limb_lengths: DEFAULT_LIMB_LENGTHS.to_vec(),
            limb_scale: 1.0,
            joint_angle_ranges: JointAngleRanges::default(),
            camera_elevation_range: (-0.2, 0.6),
            camera_azimuth_range: (-std::f64::consts::PI, std::f64::consts::PI),
            scale_range: (0.09, 0.15),
        }
    }
}

impl SyntheticPoseConfig {
    pub fn new(seed: u64, count: usize) -> Self {
        SyntheticPoseConfig {
            seed,
            count,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::InvalidConfig("count must be positive".into()));
        }
        if self.limb_lengths.len() != 16 {
            return Err(Error::InvalidConfig(format!(
                "expected 16 limb lengths, got {}",
                self.limb_lengths.len()
            )));
        }
        if self.limb_lengths.iter().any(|&l| !(l > 0.0)) || !(self.limb_scale > 0.0) {
            return Err(Error::InvalidConfig("limb lengths must be positive".into()));
        }
        for (name, (lo, hi)) in self.joint_angle_ranges.all() {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "empty or non-finite range for {name}"
                )));
            }
        }
        for (name, (lo, hi)) in [
            ("camera_elevation", self.camera_elevation_range),
            ("camera_azimuth", self.camera_azimuth_range),
            ("scale", self.scale_range),
        ] {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "empty or non-finite range for {name}"
                )));
            }
        }
        if self.scale_range.0 <= 0.0 {
            return Err(Error::InvalidConfig("scale range must be positive".into()));
        }
        Ok(())
    }

    fn scaled_lengths(&self) -> Vec<f64> {
        self.limb_lengths
            .iter()
            .map(|l| l * self.limb_scale)
            .collect()
    }
}

/// Isotropic Gaussian pixel noise for 2D observations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Standard deviation in pixels.
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) {
            return Err(Error::InvalidConfig("noise sigma must be >= 0".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pairing {
    /// 2D and 3D entries with matching indices describe the same frame; used
    /// for evaluation only.
    Paired,
    /// Independent 2D and 3D pools with no index correspondence; the training
    /// mode for weak supervision.
    Unpaired,
}

/// An in-memory dataset: 2D observations, optional 3D poses and cameras, the
/// template pose and the preprocessing flags.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseDataset {
    pub poses2d: Vec<Pose2D>,
    pub poses3d: Vec<Pose3D>,
    pub cameras: Vec<CameraMatrix>,
    pub template: Option<Pose3D>,
    pub pairing: Pairing,
    /// 2D poses are root-centered and divided by their standard deviation.
    pub normalized_2d: bool,
    /// 3D poses are root-centered and template-aligned.
    pub aligned_3d: bool,
    /// Joints no 2D detector reports for this dataset (masked on load).
    pub masked_joints: Vec<usize>,
    pub joints: usize,
    pub action: String,
    pub seed: u64,
}

impl PoseDataset {
    pub fn len_2d(&self) -> usize {
        self.poses2d.len()
    }

    pub fn len_3d(&self) -> usize {
        self.poses3d.len()
    }

    pub fn validate(&self) -> Result<()> {
        for p in &self.poses2d {
            if p.n_joints() != self.joints {
                return Err(Error::DimensionMismatch {
                    context: "dataset 2D pose",
                    expected: self.joints,
                    actual: p.n_joints(),
                });
            }
        }
        for p in &self.poses3d {
            if p.n_joints() != self.joints {
                return Err(Error::DimensionMismatch {
                    context: "dataset 3D pose",
                    expected: self.joints,
                    actual: p.n_joints(),
                });
            }
        }
        if self.pairing == Pairing::Paired {
            if !self.poses3d.is_empty() && self.poses3d.len() != self.poses2d.len() {
                return Err(Error::DimensionMismatch {
                    context: "paired dataset 3D count",
                    expected: self.poses2d.len(),
                    actual: self.poses3d.len(),
                });
            }
            if !self.cameras.is_empty() && self.cameras.len() != self.poses2d.len() {
                return Err(Error::DimensionMismatch {
                    context: "paired dataset camera count",
                    expected: self.poses2d.len(),
                    actual: self.cameras.len(),
                });
            }
        }
        Ok(())
    }
}

/// Combines a 2D pool and a 3D pool into an unpaired training set. The pools
/// must come from different generator seeds so no hidden correspondence can
/// leak into training.
pub fn make_unpaired(pool_2d: &PoseDataset, pool_3d: &PoseDataset) -> Result<PoseDataset> {
    if pool_2d.seed == pool_3d.seed {
        return Err(Error::InvalidConfig(
            "unpaired pools must be generated with different seeds".into(),
        ));
    }
    if pool_2d.joints != pool_3d.joints {
        return Err(Error::DimensionMismatch {
            context: "unpaired pools",
            expected: pool_2d.joints,
            actual: pool_3d.joints,
        });
    }
    Ok(PoseDataset {
        poses2d: pool_2d.poses2d.clone(),
        poses3d: pool_3d.poses3d.clone(),
        cameras: Vec::new(),
        template: pool_3d.template.clone(),
        pairing: Pairing::Unpaired,
        normalized_2d: pool_2d.normalized_2d,
        aligned_3d: pool_3d.aligned_3d,
        masked_joints: pool_2d.masked_joints.clone(),
        joints: pool_2d.joints,
        action: pool_2d.action.clone(),
        seed: pool_2d.seed,
    })
}

// ---------------------------------------------------------------------------
// Forward kinematics
// ---------------------------------------------------------------------------

fn rot_x(a: f64) -> Matrix3<f64> {
    Matrix3::new(1.0, 0.0, 0.0, 0.0, a.cos(), -a.sin(), 0.0, a.sin(), a.cos())
}

fn rot_y(a: f64) -> Matrix3<f64> {
    Matrix3::new(a.cos(), 0.0, a.sin(), 0.0, 1.0, 0.0, -a.sin(), 0.0, a.cos())
}

/// Rodrigues rotation of `v` about the unit axis `k`.
fn rotate_about(v: &Vector3<f64>, k: &Vector3<f64>, angle: f64) -> Vector3<f64> {
    let (s, c) = angle.sin_cos();
    v * c + k.cross(v) * s + k * (k.dot(v) * (1.0 - c))
}

fn rotation_from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    let (x, y, z) = (axis.x, axis.y, axis.z);
    Matrix3::new(
        t * x * x + c,
        t * x * y - s * z,
        t * x * z + s * y,
        t * x * y + s * z,
        t * y * y + c,
        t * y * z - s * x,
        t * x * z - s * y,
        t * y * z + s * x,
        t * z * z + c,
    )
}

/// Minimal rotation taking unit vector `a` to unit vector `b`.
fn minimal_rotation(a: &Vector3<f64>, b: &Vector3<f64>) -> Matrix3<f64> {
    let dot = a.dot(b).clamp(-1.0, 1.0);
    if dot > 1.0 - 1e-12 {
        return Matrix3::identity();
    }
    if dot < -1.0 + 1e-12 {
        // antipodal: half a turn about any perpendicular axis
        let helper = if a.x.abs() < 0.9 { Vector3::x() } else { Vector3::z() };
        let axis = a.cross(&helper).normalize();
        return rotation_from_axis_angle(&axis, std::f64::consts::PI);
    }
    let axis = a.cross(b).normalize();
    rotation_from_axis_angle(&axis, dot.acos())
}

/// Limb direction from polar angle (off the downward axis) and azimuth;
/// `side` is `+1` for the left, `-1` for the right.
fn limb_direction(polar: f64, azimuth: f64, side: f64) -> Vector3<f64> {
    Vector3::new(
        side * polar.sin() * azimuth.cos(),
        -polar.cos(),
        polar.sin() * azimuth.sin(),
    )
}

/// Bends a distal segment off the proximal direction `d` by `flexion` about
/// the limb's lateral axis; `axis_sign` picks the bending side (elbows bend
/// forward, knees backward).
fn bend(d: &Vector3<f64>, flexion: f64, axis_sign: f64) -> Vector3<f64> {
    let frame = minimal_rotation(&Vector3::new(0.0, -1.0, 0.0), d);
    let axis = frame * Vector3::new(axis_sign, 0.0, 0.0);
    rotate_about(d, &axis, flexion)
}

#[derive(Debug, Clone, Copy)]
struct SampledAngles {
    torso_tilt: f64,
    torso_twist: f64,
    head_nod: f64,
    shoulder_polar: [f64; 2],
    shoulder_azimuth: [f64; 2],
    elbow_flexion: [f64; 2],
    hip_polar: [f64; 2],
    hip_azimuth: [f64; 2],
    knee_flexion: [f64; 2],
}

fn sample_angles(rng: &mut ChaCha8Rng, r: &JointAngleRanges) -> SampledAngles {
    let mut draw = |(lo, hi): Range| rng.random_range(lo..=hi);
    SampledAngles {
        torso_tilt: draw(r.torso_tilt),
        torso_twist: draw(r.torso_twist),
        head_nod: draw(r.head_nod),
        shoulder_polar: [draw(r.shoulder_polar), draw(r.shoulder_polar)],
        shoulder_azimuth: [draw(r.shoulder_azimuth), draw(r.shoulder_azimuth)],
        elbow_flexion: [draw(r.elbow_flexion), draw(r.elbow_flexion)],
        hip_polar: [draw(r.hip_polar), draw(r.hip_polar)],
        hip_azimuth: [draw(r.hip_azimuth), draw(r.hip_azimuth)],
        knee_flexion: [draw(r.knee_flexion), draw(r.knee_flexion)],
    }
}

/// Forward kinematics over the default skeleton; pelvis at the origin, +y up,
/// +x the subject's left, +z forward. Every bone has exactly its configured
/// length.
fn fk_pose(lengths: &[f64], a: &SampledAngles) -> Matrix3xX<f64> {
    let torso = rot_y(a.torso_twist) * rot_x(a.torso_tilt);
    let up = torso * Vector3::y();
    let head_dir = torso * (rot_x(a.head_nod) * Vector3::y());

    let pelvis = Vector3::zeros();
    let spine = pelvis + up * lengths[0];
    let neck = spine + up * lengths[1];
    let head = neck + head_dir * lengths[2];
    let head_top = head + head_dir * lengths[3];

    let mut joints = Matrix3xX::zeros(17);
    joints.set_column(0, &pelvis.column(0));
    joints.set_column(1, &spine.column(0));
    joints.set_column(2, &neck.column(0));
    joints.set_column(3, &head.column(0));
    joints.set_column(4, &head_top.column(0));

    for (s, &side) in [1.0f64, -1.0].iter().enumerate() {
        let shoulder = neck + torso * Vector3::new(side * lengths[4 + 3 * s], 0.0, 0.0);
        let upper_dir = torso * limb_direction(a.shoulder_polar[s], a.shoulder_azimuth[s], side);
        let elbow = shoulder + upper_dir * lengths[5 + 3 * s];
        // elbows bend forward
        let lower_dir = bend(&upper_dir, a.elbow_flexion[s], -1.0);
        let wrist = elbow + lower_dir * lengths[6 + 3 * s];
        joints.set_column(5 + 3 * s, &shoulder.column(0));
        joints.set_column(6 + 3 * s, &elbow.column(0));
        joints.set_column(7 + 3 * s, &wrist.column(0));

        let hip = Vector3::new(side * lengths[10 + 3 * s], 0.0, 0.0);
        let thigh_dir = limb_direction(a.hip_polar[s], a.hip_azimuth[s], side);
        let knee = hip + thigh_dir * lengths[11 + 3 * s];
        // knees bend backward
        let shank_dir = bend(&thigh_dir, a.knee_flexion[s], 1.0);
        let ankle = knee + shank_dir * lengths[12 + 3 * s];
        joints.set_column(11 + 3 * s, &hip.column(0));
        joints.set_column(12 + 3 * s, &knee.column(0));
        joints.set_column(13 + 3 * s, &ankle.column(0));
    }

    joints
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

/// One generated sample in both frames.
struct Sample {
    canonical: Matrix3xX<f64>,
    camera_frame: Matrix3xX<f64>,
    camera: CameraMatrix,
    projection: Matrix2xX<f64>,
}

/// Deterministic per-sample generation: sample `i` draws from an independent
/// ChaCha stream of the config seed, so the dataset is reproducible and
/// parallelizable across samples.
fn generate_sample(config: &SyntheticPoseConfig, lengths: &[f64], index: u64) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index + 1);

    let angles = sample_angles(&mut rng, &config.joint_angle_ranges);
    let canonical = fk_pose(lengths, &angles);

    let elevation =
        rng.random_range(config.camera_elevation_range.0..=config.camera_elevation_range.1);
    let azimuth = rng.random_range(config.camera_azimuth_range.0..=config.camera_azimuth_range.1);
    let scale = rng.random_range(config.scale_range.0..=config.scale_range.1);

    let rot = rot_x(elevation) * rot_y(azimuth);
    let camera_frame = Matrix3xX::from(&rot * &canonical);
    let k = nalgebra::Matrix2x3::from(rot.fixed_view::<2, 3>(0, 0).into_owned()) * scale;
    let camera = CameraMatrix::new(k).expect("camera from rotation is finite");
    let projection = Matrix2xX::from(camera.matrix() * &canonical);

    Sample {
        canonical,
        camera_frame,
        camera,
        projection,
    }
}

/// Generates a paired synthetic dataset: 2D observations with the spine
/// masked, camera-frame 3D ground truth, the exact cameras and the template
/// (mean canonical pose of the pool).
pub fn generate_synthetic(config: &SyntheticPoseConfig) -> Result<PoseDataset> {
    config.validate()?;
    let spec = SkeletonSpec::h36m17();
    let lengths = config.scaled_lengths();
    let detectable = spec.detectable_mask();

    let mut poses2d = Vec::with_capacity(config.count);
    let mut poses3d = Vec::with_capacity(config.count);
    let mut cameras = Vec::with_capacity(config.count);
    let mut template_sum = Matrix3xX::zeros(17);

    for i in 0..config.count {
        let sample = generate_sample(config, &lengths, i as u64);
        template_sum += &sample.canonical;
        poses2d.push(Pose2D::new(sample.projection, detectable.clone())?);
        poses3d.push(Pose3D::new(sample.camera_frame)?);
        cameras.push(sample.camera);
    }

    let template = Pose3D::new(template_sum / config.count as f64)?;
    let masked_joints = spec.spine_index.into_iter().collect();

    let ds = PoseDataset {
        poses2d,
        poses3d,
        cameras,
        template: Some(template),
        pairing: Pairing::Paired,
        normalized_2d: false,
        aligned_3d: false,
        masked_joints,
        joints: 17,
        action: "synthetic".to_string(),
        seed: config.seed,
    };
    ds.validate()?;
    Ok(ds)
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

/// Root-centers a 2D pose and divides it by the standard deviation of its
/// visible coordinates, so every valid pose has unit coordinate spread.
pub fn preprocess_2d(pose: &Pose2D, root_index: usize) -> Result<Pose2D> {
    let n = pose.n_joints();
    if root_index >= n {
        return Err(Error::DimensionMismatch {
            context: "preprocess_2d root",
            expected: n,
            actual: root_index,
        });
    }
    if pose.visible_count() < 2 {
        return Err(Error::Degenerate(
            "2D pose needs at least two visible joints".into(),
        ));
    }
    let root = pose.coords().column(root_index).clone_owned();
    let mut coords = pose.coords().clone();
    for mut col in coords.column_iter_mut() {
        col -= &root;
    }

    let mut entries = Vec::with_capacity(2 * n);
    for j in 0..n {
        if pose.is_visible(j) {
            entries.push(coords[(0, j)]);
            entries.push(coords[(1, j)]);
        }
    }
    let mean = entries.iter().sum::<f64>() / entries.len() as f64;
    let var = entries.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / entries.len() as f64;
    let std = var.sqrt();
    if std < 1e-12 {
        return Err(Error::Degenerate("2D pose has zero spread".into()));
    }
    coords /= std;
    Pose2D::new(coords, pose.visibility().to_vec())
}

/// Root-centers a 3D pose and removes its rotation and scale by aligning the
/// shoulder/hip anchors onto the template.
pub fn preprocess_3d(pose: &Pose3D, template: &Pose3D, spec: &SkeletonSpec) -> Result<Pose3D> {
    let anchors = spec.shoulder_hip_indices()?;
    let centered = pose.root_centered(spec.root_index);
    let template_centered = template.root_centered(spec.root_index);
    align_to_template(&centered, &template_centered, &anchors)
}

/// Adds i.i.d. Gaussian pixel noise to every visible 2D coordinate. Must run
/// before normalization, since sigma is in pixel units.
pub fn add_noise(dataset: &PoseDataset, noise: &NoiseSpec) -> Result<PoseDataset> {
    noise.validate()?;
    if dataset.normalized_2d {
        return Err(Error::InvalidConfig(
            "noise is defined in pixels and must be added before 2D normalization".into(),
        ));
    }
    if noise.sigma == 0.0 {
        return Ok(dataset.clone());
    }
    let mut out = dataset.clone();
    for (i, pose) in out.poses2d.iter_mut().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
        rng.set_stream(i as u64 + 1);
        let mut coords = pose.coords().clone();
        for j in 0..pose.n_joints() {
            if pose.is_visible(j) {
                let dx: f64 = StandardNormal.sample(&mut rng);
                let dy: f64 = StandardNormal.sample(&mut rng);
                coords[(0, j)] += noise.sigma * dx;
                coords[(1, j)] += noise.sigma * dy;
            }
        }
        pose.set_coords(coords)?;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// File format
// ---------------------------------------------------------------------------
//
// Line-oriented text, one record per line, comma-separated decimals printed
// with shortest round-trip formatting so a save/load cycle is lossless:
//
//   #replift v1 joints=<n> kind=<2d|3d|cam> normalized=<0|1>
//   <record>
//   ...
//
// 2D records carry `2n` coordinates plus a decimal visibility bitmask
// (bit j = joint j visible); the bitmask may be omitted on input, in which
// case every joint is visible. 3D records carry `3n` coordinates, camera
// records the 6 entries of `K` row-major. A TOML manifest lists the member
// files, the pairing flag and the per-dataset masked joints.

const MANIFEST_NAME: &str = "manifest.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordKind {
    TwoD,
    ThreeD,
    Camera,
}

impl RecordKind {
    fn as_str(&self) -> &'static str {
        match self {
            RecordKind::TwoD => "2d",
            RecordKind::ThreeD => "3d",
            RecordKind::Camera => "cam",
        }
    }

    fn parse(s: &str) -> Option<RecordKind> {
        match s {
            "2d" => Some(RecordKind::TwoD),
            "3d" => Some(RecordKind::ThreeD),
            "cam" => Some(RecordKind::Camera),
            _ => None,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetManifest {
    version: u32,
    pairing: Pairing,
    joints: usize,
    seed: u64,
    action: String,
    masked_joints: Vec<usize>,
    files: ManifestFiles,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestFiles {
    poses2d: Option<String>,
    poses3d: Option<String>,
    cameras: Option<String>,
    template: Option<String>,
}

fn fmt_floats(values: impl IntoIterator<Item = f64>) -> String {
    let mut out = String::new();
    for (i, v) in values.into_iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&format!("{v}"));
    }
    out
}

fn header(joints: usize, kind: RecordKind, normalized: bool) -> String {
    format!(
        "#replift v1 joints={joints} kind={} normalized={}",
        kind.as_str(),
        if normalized { 1 } else { 0 }
    )
}

struct ParsedHeader {
    joints: usize,
    kind: RecordKind,
    normalized: bool,
}

fn parse_header(path: &Path, line: &str) -> Result<ParsedHeader> {
    let err = |message: String| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        message,
    };
    let rest = line
        .strip_prefix("#replift v1 ")
        .ok_or_else(|| err("missing '#replift v1' header".into()))?;
    let mut joints = None;
    let mut kind = None;
    let mut normalized = None;
    for field in rest.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| err(format!("malformed header field '{field}'")))?;
        match key {
            "joints" => {
                joints = Some(
                    value
                        .parse::<usize>()
                        .map_err(|_| err(format!("invalid joint count '{value}'")))?,
                )
            }
            "kind" => {
                kind = Some(
                    RecordKind::parse(value)
                        .ok_or_else(|| err(format!("unknown record kind '{value}'")))?,
                )
            }
            "normalized" => {
                normalized = Some(match value {
                    "0" => false,
                    "1" => true,
                    _ => return Err(err(format!("invalid normalized flag '{value}'"))),
                })
            }
            _ => return Err(err(format!("unknown header field '{key}'"))),
        }
    }
    Ok(ParsedHeader {
        joints: joints.ok_or_else(|| err("header missing joints=".into()))?,
        kind: kind.ok_or_else(|| err("header missing kind=".into()))?,
        normalized: normalized.ok_or_else(|| err("header missing normalized=".into()))?,
    })
}

fn parse_fields(path: &Path, line_no: usize, line: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for field in line.split(',') {
        let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: format!("invalid number '{}'", field.trim()),
        })?;
        if !v.is_finite() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: "non-finite value".into(),
            });
        }
        out.push(v);
    }
    Ok(out)
}

/// Writes a 2D pose file; each record ends with the visibility bitmask.
pub fn write_pose2d_file(
    path: &Path,
    poses: &[Pose2D],
    joints: usize,
    normalized: bool,
) -> Result<()> {
    let mut text = header(joints, RecordKind::TwoD, normalized);
    text.push('\n');
    for p in poses {
        let mut mask: u64 = 0;
        for (j, &v) in p.visibility().iter().enumerate() {
            if v {
                mask |= 1 << j;
            }
        }
        text.push_str(&fmt_floats(p.coords().as_slice().iter().copied()));
        text.push(',');
        text.push_str(&mask.to_string());
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

/// Reads a 2D pose file; `masked_joints` are forced invisible on every record.
pub fn read_pose2d_file(path: &Path, masked_joints: &[usize]) -> Result<(Vec<Pose2D>, bool)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, first) = lines.next().ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        message: "empty file".into(),
    })?;
    let head = parse_header(path, first)?;
    if head.kind != RecordKind::TwoD {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("expected kind=2d, found kind={}", head.kind.as_str()),
        });
    }
    let n = head.joints;
    let mut poses = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let fields = parse_fields(path, line_no, line)?;
        let (coord_fields, mask) = if fields.len() == 2 * n + 1 {
            let mask_field = fields[2 * n];
            if mask_field < 0.0 || mask_field.fract() != 0.0 {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: line_no,
                    message: format!("invalid visibility bitmask '{mask_field}'"),
                });
            }
            (&fields[..2 * n], mask_field as u64)
        } else if fields.len() == 2 * n {
            (&fields[..], u64::MAX)
        } else {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: format!(
                    "record has {} fields, expected {} coordinates (+ optional bitmask)",
                    fields.len(),
                    2 * n
                ),
            });
        };
        let coords = Matrix2xX::from_column_slice(coord_fields);
        let mut visibility: Vec<bool> = (0..n).map(|j| mask >> j & 1 == 1).collect();
        for &m in masked_joints {
            if m < n {
                visibility[m] = false;
            }
        }
        poses.push(Pose2D::new(coords, visibility).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?);
    }
    Ok((poses, head.normalized))
}

pub fn write_pose3d_file(
    path: &Path,
    poses: &[Pose3D],
    joints: usize,
    aligned: bool,
) -> Result<()> {
    let mut text = header(joints, RecordKind::ThreeD, aligned);
    text.push('\n');
    for p in poses {
        text.push_str(&fmt_floats(p.coords().as_slice().iter().copied()));
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn read_pose3d_file(path: &Path) -> Result<(Vec<Pose3D>, bool)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, first) = lines.next().ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        message: "empty file".into(),
    })?;
    let head = parse_header(path, first)?;
    if head.kind != RecordKind::ThreeD {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("expected kind=3d, found kind={}", head.kind.as_str()),
        });
    }
    let n = head.joints;
    let mut poses = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let fields = parse_fields(path, line_no, line)?;
        if fields.len() != 3 * n {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("record has {} fields, expected {}", fields.len(), 3 * n),
            });
        }
        poses.push(
            Pose3D::new(Matrix3xX::from_column_slice(&fields)).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: e.to_string(),
            })?,
        );
    }
    Ok((poses, head.normalized))
}

pub fn write_camera_file(path: &Path, cameras: &[CameraMatrix], joints: usize) -> Result<()> {
    let mut text = header(joints, RecordKind::Camera, false);
    text.push('\n');
    for c in cameras {
        text.push_str(&fmt_floats(c.to_vector()));
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn read_camera_file(path: &Path) -> Result<Vec<CameraMatrix>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, first) = lines.next().ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        message: "empty file".into(),
    })?;
    let head = parse_header(path, first)?;
    if head.kind != RecordKind::Camera {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("expected kind=cam, found kind={}", head.kind.as_str()),
        });
    }
    let mut cameras = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let fields = parse_fields(path, line_no, line)?;
        if fields.len() != 6 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("camera record has {} fields, expected 6", fields.len()),
            });
        }
        cameras.push(
            crate::camera::camera_from_vector(&fields).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: e.to_string(),
            })?,
        );
    }
    Ok(cameras)
}

/// Saves a dataset into `dir`: one file per record kind plus `manifest.toml`.
pub fn save_dataset(dataset: &PoseDataset, dir: &Path) -> Result<()> {
    dataset.validate()?;
    fs::create_dir_all(dir)?;
    let mut files = ManifestFiles {
        poses2d: None,
        poses3d: None,
        cameras: None,
        template: None,
    };
    if !dataset.poses2d.is_empty() {
        let name = "poses2d.rl";
        write_pose2d_file(
            &dir.join(name),
            &dataset.poses2d,
            dataset.joints,
            dataset.normalized_2d,
        )?;
        files.poses2d = Some(name.to_string());
    }
    if !dataset.poses3d.is_empty() {
        let name = "poses3d.rl";
        write_pose3d_file(
            &dir.join(name),
            &dataset.poses3d,
            dataset.joints,
            dataset.aligned_3d,
        )?;
        files.poses3d = Some(name.to_string());
    }
    if !dataset.cameras.is_empty() {
        let name = "cameras.rl";
        write_camera_file(&dir.join(name), &dataset.cameras, dataset.joints)?;
        files.cameras = Some(name.to_string());
    }
    if let Some(template) = &dataset.template {
        let name = "template.rl";
        write_pose3d_file(
            &dir.join(name),
            std::slice::from_ref(template),
            dataset.joints,
            false,
        )?;
        files.template = Some(name.to_string());
    }
    let manifest = DatasetManifest {
        version: 1,
        pairing: dataset.pairing,
        joints: dataset.joints,
        seed: dataset.seed,
        action: dataset.action.clone(),
        masked_joints: dataset.masked_joints.clone(),
        files,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    fs::write(dir.join(MANIFEST_NAME), text)?;
    Ok(())
}

/// Loads a dataset directory written by [`save_dataset`].
pub fn load_dataset(dir: &Path) -> Result<PoseDataset> {
    let manifest_path = dir.join(MANIFEST_NAME);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::Parse {
        path: manifest_path.clone(),
        line: 0,
        message: format!("cannot read manifest: {e}"),
    })?;
    let manifest: DatasetManifest = toml::from_str(&text).map_err(|e| Error::Parse {
        path: manifest_path.clone(),
        line: 0,
        message: e.to_string(),
    })?;

    let resolve = |name: &Option<String>| -> Option<PathBuf> { name.as_ref().map(|n| dir.join(n)) };

    let (poses2d, normalized_2d) = match resolve(&manifest.files.poses2d) {
        Some(p) => read_pose2d_file(&p, &manifest.masked_joints)?,
        None => (Vec::new(), false),
    };
    let (poses3d, aligned_3d) = match resolve(&manifest.files.poses3d) {
        Some(p) => read_pose3d_file(&p)?,
        None => (Vec::new(), false),
    };
    let cameras = match resolve(&manifest.files.cameras) {
        Some(p) => read_camera_file(&p)?,
        None => Vec::new(),
    };
    let template = match resolve(&manifest.files.template) {
        Some(p) => {
            let (mut poses, _) = read_pose3d_file(&p)?;
            if poses.len() != 1 {
                return Err(Error::Parse {
                    path: p,
                    line: 1,
                    message: format!(
                        "template file must hold exactly one pose, found {}",
                        poses.len()
                    ),
                });
            }
            Some(poses.remove(0))
        }
        None => None,
    };

    let ds = PoseDataset {
        poses2d,
        poses3d,
        cameras,
        template,
        pairing: manifest.pairing,
        normalized_2d,
        aligned_3d,
        masked_joints: manifest.masked_joints,
        joints: manifest.joints,
        action: manifest.action,
        seed: manifest.seed,
    };
    ds.validate()?;
    Ok(ds)
}
