//! Synthetic foliage and RGB-D rendering with ground truth.
//!
//! Stands in for the orchard, the camera, and the segmenter: batches of
//! parametric leaves are laid out in the camera frustum, rendered to a depth
//! map by per-pixel ray casting (exact surface depths, nearest leaf owns the
//! pixel), and emitted together with per-leaf instance masks and ground
//! truth. A small noise model adds Gaussian depth error and the missing
//! values that cluster at leaf boundaries on real depth cameras.

use crate::derive_seed;
use crate::geometry::{
    quat_from_basis, vec3_array, CameraIntrinsics, Pose, Transform, UnitQuat, Vec3,
};
use crate::perception::{BinaryMask, DepthMap, Observation, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneGenError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("empty render: no leaf projects into the image")]
    EmptyRender,
}

/// Thin flat colors used for the provenance RGB channel.
const LEAF_PALETTE: [[u8; 3]; 8] = [
    [46, 139, 60],
    [96, 170, 60],
    [30, 110, 80],
    [140, 190, 70],
    [70, 150, 110],
    [110, 140, 40],
    [50, 120, 35],
    [160, 200, 120],
];

// ---------------------------------------------------------------------------
// Leaf model
// ---------------------------------------------------------------------------

/// One synthetic leaf: an elliptical patch of `length x width` bent
/// cylindrically about its tangent axis, posed in the world frame.
///
/// In the leaf frame (x = tangent, y = bitangent, z = normal) the surface is
/// `(u, sin(k v)/k, (1 - cos(k v))/k)` for curvature `k`, with `(u, v)`
/// restricted to the ellipse of semi-axes `length/2` and `width/2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafSpec {
    pub gt_pose: Pose,
    pub length: f64,
    pub width: f64,
    pub curvature: f64,
    #[serde(with = "vec3_array")]
    pub stem_dir: Vec3,
}

impl LeafSpec {
    pub fn validate(&self) -> Result<(), SceneGenError> {
        if !(self.length > 0.0 && self.width > 0.0) {
            return Err(SceneGenError::InvalidParams(format!(
                "leaf dimensions must be positive ({} x {})",
                self.length, self.width
            )));
        }
        if self.curvature.abs() * self.length >= PI {
            return Err(SceneGenError::InvalidParams(format!(
                "curvature {} over length {} would self-intersect",
                self.curvature, self.length
            )));
        }
        Ok(())
    }

    /// Surface point in the leaf frame for ellipse coordinates `(u, v)`.
    pub fn local_surface_point(&self, u: f64, v: f64) -> Vec3 {
        if self.curvature.abs() < 1e-9 {
            Vec3::new(u, v, 0.0)
        } else {
            let k = self.curvature;
            Vec3::new(u, (k * v).sin() / k, (1.0 - (k * v).cos()) / k)
        }
    }

    /// Surface point in the frame the pose lives in.
    pub fn surface_point(&self, u: f64, v: f64) -> Vec3 {
        self.gt_pose.position + self.gt_pose.orientation.rotate(self.local_surface_point(u, v))
    }

    pub fn in_ellipse(&self, u: f64, v: f64) -> bool {
        let a = self.length / 2.0;
        let b = self.width / 2.0;
        (u / a) * (u / a) + (v / b) * (v / b) <= 1.0
    }

    /// Dense grid sample of the surface (for tests and PLY export).
    pub fn sample_surface(&self, nu: usize, nv: usize) -> Vec<Vec3> {
        let mut out = Vec::new();
        for i in 0..nu {
            for j in 0..nv {
                let u = self.length * (i as f64 / (nu - 1).max(1) as f64 - 0.5);
                let v = self.width * (j as f64 / (nv - 1).max(1) as f64 - 0.5);
                if self.in_ellipse(u, v) {
                    out.push(self.surface_point(u, v));
                }
            }
        }
        out
    }
}

/// A batch of leaves plus the camera that observes them.
///
/// `camera_pose` maps world coordinates into the camera frame; generated
/// scenes use the identity (the world *is* the camera frame).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub leaves: Vec<LeafSpec>,
    pub camera_pose: Transform,
    pub standoff: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_preset: Option<String>,
}

impl Scene {
    pub fn validate(&self) -> Result<(), SceneGenError> {
        if !(0.3..=3.0).contains(&self.standoff) {
            return Err(SceneGenError::InvalidParams(format!(
                "standoff {} outside the camera working range [0.3, 3.0]",
                self.standoff
            )));
        }
        for leaf in &self.leaves {
            leaf.validate()?;
        }
        Ok(())
    }

    /// Leaf poses expressed in the camera frame.
    pub fn camera_frame_leaves(&self) -> Vec<(Pose, &LeafSpec)> {
        self.leaves
            .iter()
            .map(|leaf| (self.camera_pose.apply_pose(&leaf.gt_pose), leaf))
            .collect()
    }
}

/// Depth sensor degradation: additive Gaussian error plus missing values in
/// a band along each mask boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub depth_sigma: f64,
    pub boundary_dropout_px: u32,
    pub dropout_rate: f64,
}

impl NoiseModel {
    pub fn none() -> Self {
        Self {
            depth_sigma: 0.0,
            boundary_dropout_px: 0,
            dropout_rate: 0.0,
        }
    }

    /// Indoor conditions: mild depth error, thin dropout band.
    pub fn lab() -> Self {
        Self {
            depth_sigma: 0.001,
            boundary_dropout_px: 1,
            dropout_rate: 0.3,
        }
    }

    /// Outdoor conditions: stronger error and heavy boundary dropout.
    pub fn field() -> Self {
        Self {
            depth_sigma: 0.003,
            boundary_dropout_px: 3,
            dropout_rate: 0.7,
        }
    }

    pub fn from_preset(name: &str) -> Result<Self, SceneGenError> {
        match name {
            "lab" => Ok(Self::lab()),
            "field" => Ok(Self::field()),
            "none" => Ok(Self::none()),
            other => Err(SceneGenError::InvalidParams(format!(
                "unknown noise preset '{other}' (expected lab, field, or none)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<(), SceneGenError> {
        if self.depth_sigma < 0.0 || !(0.0..=1.0).contains(&self.dropout_rate) {
            return Err(SceneGenError::InvalidParams(format!(
                "noise model out of range: sigma={}, rate={}",
                self.depth_sigma, self.dropout_rate
            )));
        }
        Ok(())
    }
}

/// Per-leaf ground truth in the camera frame, emitted by the renderer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtRecord {
    pub leaf_id: usize,
    pub pose: Pose,
    #[serde(with = "vec3_array")]
    pub center: Vec3,
    #[serde(with = "vec3_array")]
    pub normal: Vec3,
    pub length: f64,
    pub width: f64,
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

/// Sampling ranges for a synthetic leaf.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafGenParams {
    pub length_range: (f64, f64),
    pub width_range: (f64, f64),
    pub curvature_range: (f64, f64),
    /// Maximum tilt of the leaf normal away from the camera direction (rad).
    pub max_tilt: f64,
    /// Maximum in-plane rotation of the tangent away from image-up (rad).
    pub max_roll: f64,
    #[serde(with = "vec3_array")]
    pub position_min: Vec3,
    #[serde(with = "vec3_array")]
    pub position_max: Vec3,
}

impl Default for LeafGenParams {
    fn default() -> Self {
        Self {
            length_range: (0.06, 0.10),
            width_range: (0.035, 0.055),
            curvature_range: (-2.5, 2.5),
            max_tilt: 0.5,
            max_roll: 0.6,
            position_min: Vec3::new(-0.11, -0.08, 0.45),
            position_max: Vec3::new(0.11, 0.08, 0.55),
        }
    }
}

impl LeafGenParams {
    fn validate(&self) -> Result<(), SceneGenError> {
        let ordered = |r: (f64, f64)| r.0 <= r.1 && r.0.is_finite() && r.1.is_finite();
        if !(ordered(self.length_range)
            && ordered(self.width_range)
            && ordered(self.curvature_range)
            && self.length_range.0 > 0.0
            && self.width_range.0 > 0.0)
        {
            return Err(SceneGenError::InvalidParams(
                "leaf parameter ranges must be ordered and positive".into(),
            ));
        }
        if self.position_min.z <= 0.0 {
            return Err(SceneGenError::InvalidParams(
                "leaves must sit in front of the camera (z > 0)".into(),
            ));
        }
        Ok(())
    }
}

fn sample_range(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    if range.0 == range.1 {
        range.0
    } else {
        rng.random_range(range.0..range.1)
    }
}

/// Orientation for a leaf at `position`: the normal faces the camera with a
/// bounded random tilt, the tangent starts at image-up with a bounded roll.
fn aim_leaf(
    position: Vec3,
    tilt_dir: f64,
    tilt: f64,
    roll: f64,
) -> Result<UnitQuat, SceneGenError> {
    let to_camera = (-position)
        .normalized()
        .ok_or_else(|| SceneGenError::InvalidParams("leaf at the camera origin".into()))?;
    let mut ortho1 = to_camera.cross(Vec3::unit_x());
    if ortho1.norm() < 1e-6 {
        ortho1 = to_camera.cross(Vec3::unit_y());
    }
    let ortho1 = ortho1.normalized().expect("orthogonal axis");
    let ortho2 = to_camera.cross(ortho1);
    let tilt_axis = ortho1 * tilt_dir.cos() + ortho2 * tilt_dir.sin();
    let normal = UnitQuat::from_axis_angle(tilt_axis, tilt).rotate(to_camera);

    // Image-up is -y in the optical convention.
    let up = Vec3::new(0.0, -1.0, 0.0);
    let mut t0 = up - normal * up.dot(normal);
    if t0.norm() < 1e-6 {
        let fallback = Vec3::unit_x();
        t0 = fallback - normal * fallback.dot(normal);
    }
    let t0 = t0.normalized().expect("in-plane tangent");
    let tangent = UnitQuat::from_axis_angle(normal, roll).rotate(t0);
    let bitangent = normal.cross(tangent);
    quat_from_basis(tangent, bitangent, normal)
        .map_err(|e| SceneGenError::InvalidParams(format!("degenerate leaf orientation: {e}")))
}

/// Deterministically samples one leaf from the given parameter ranges.
pub fn gen_leaf(rng_seed: u64, params: &LeafGenParams) -> Result<LeafSpec, SceneGenError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let length = sample_range(&mut rng, params.length_range);
    let width = sample_range(&mut rng, params.width_range);
    let mut curvature = sample_range(&mut rng, params.curvature_range);
    // Keep clear of the self-intersection bound.
    let max_curv = 0.95 * PI / length;
    curvature = curvature.clamp(-max_curv, max_curv);

    let position = Vec3::new(
        sample_range(&mut rng, (params.position_min.x, params.position_max.x)),
        sample_range(&mut rng, (params.position_min.y, params.position_max.y)),
        sample_range(&mut rng, (params.position_min.z, params.position_max.z)),
    );
    let tilt_dir = rng.random_range(0.0..(2.0 * PI));
    let tilt = rng.random_range(0.0..params.max_tilt.max(1e-9));
    let roll = rng.random_range(-params.max_roll..params.max_roll.max(1e-9));
    let orientation = aim_leaf(position, tilt_dir, tilt, roll)?;

    let leaf = LeafSpec {
        gt_pose: Pose::new(position, orientation),
        length,
        width,
        curvature,
        stem_dir: orientation.rotate(Vec3::unit_x()),
    };
    leaf.validate()?;
    Ok(leaf)
}

/// Angular footprint radius of a leaf as seen from the camera.
fn angular_radius(length: f64, z: f64) -> f64 {
    (length / 2.0) / z
}

/// Lays out `n_leaves` leaves at the 0.5 m standoff.
///
/// `occlusion_level` in `[0, 1]` is the probability that each leaf after the
/// first is placed overlapping an earlier one (behind it, so near leaves
/// stay clean); at 0 the image footprints are pairwise disjoint.
pub fn gen_batch(
    rng_seed: u64,
    n_leaves: usize,
    occlusion_level: f64,
) -> Result<Scene, SceneGenError> {
    gen_batch_with(rng_seed, n_leaves, occlusion_level, &LeafGenParams::default())
}

pub fn gen_batch_with(
    rng_seed: u64,
    n_leaves: usize,
    occlusion_level: f64,
    params: &LeafGenParams,
) -> Result<Scene, SceneGenError> {
    if n_leaves == 0 {
        return Err(SceneGenError::InvalidParams(
            "a batch needs at least one leaf".into(),
        ));
    }
    if !(0.0..=1.0).contains(&occlusion_level) {
        return Err(SceneGenError::InvalidParams(format!(
            "occlusion level {occlusion_level} outside [0, 1]"
        )));
    }
    params.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(rng_seed, &[0xba7c4]));
    let mut leaves: Vec<LeafSpec> = Vec::with_capacity(n_leaves);
    // Worst-case footprint used when reserving space for a leaf that is not
    // sampled yet.
    let nominal_radius = angular_radius(params.length_range.1, params.position_min.z);
    let pad = 0.02;

    for i in 0..n_leaves {
        let occlude = i > 0 && rng.random::<f64>() < occlusion_level;
        let position = if occlude {
            let target = rng.random_range(0..i);
            let anchor = leaves[target].gt_pose.position;
            let anchor_dir = (anchor.x / anchor.z, anchor.y / anchor.z);
            let anchor_radius = angular_radius(leaves[target].length, anchor.z);
            let angle = rng.random_range(0.0..(2.0 * PI));
            let separation = rng.random_range(0.25..0.55) * (anchor_radius + nominal_radius);
            let z = anchor.z + rng.random_range(0.07..0.12);
            Vec3::new(
                (anchor_dir.0 + separation * angle.cos()) * z,
                (anchor_dir.1 + separation * angle.sin()) * z,
                z,
            )
        } else {
            let mut placed = None;
            for _ in 0..500 {
                let candidate = Vec3::new(
                    sample_range(&mut rng, (params.position_min.x, params.position_max.x)),
                    sample_range(&mut rng, (params.position_min.y, params.position_max.y)),
                    sample_range(&mut rng, (params.position_min.z, params.position_max.z)),
                );
                let cand_dir = (candidate.x / candidate.z, candidate.y / candidate.z);
                let clear = leaves.iter().all(|leaf| {
                    let p = leaf.gt_pose.position;
                    let dir = (p.x / p.z, p.y / p.z);
                    let min_sep =
                        nominal_radius + angular_radius(leaf.length, p.z) + pad;
                    let dx = cand_dir.0 - dir.0;
                    let dy = cand_dir.1 - dir.1;
                    (dx * dx + dy * dy).sqrt() > min_sep
                });
                if clear {
                    placed = Some(candidate);
                    break;
                }
            }
            placed.ok_or_else(|| {
                SceneGenError::InvalidParams(format!(
                    "could not place {n_leaves} non-overlapping leaves in the frustum"
                ))
            })?
        };

        // Sample the leaf with its position pinned so shape and orientation
        // stay tied to the per-leaf seed.
        let mut leaf_params = params.clone();
        leaf_params.position_min = position;
        leaf_params.position_max = position;
        let leaf = gen_leaf(derive_seed(rng_seed, &[0x1eaf, i as u64]), &leaf_params)?;
        leaves.push(leaf);
    }

    Ok(Scene {
        leaves,
        camera_pose: Transform::identity(),
        standoff: 0.5,
        noise_preset: None,
    })
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

/// Intersects the camera-origin ray `s * dir` with a leaf surface posed in
/// the camera frame; returns the depth (camera z) of the nearest hit.
fn intersect_leaf(pose: &Pose, leaf: &LeafSpec, dir: Vec3) -> Option<f64> {
    let inv_rot = pose.orientation.inverse();
    let o = inv_rot.rotate(-pose.position);
    let d = inv_rot.rotate(dir);

    if leaf.curvature.abs() < 1e-9 {
        // Plane z = 0 in the leaf frame.
        if d.z.abs() < 1e-12 {
            return None;
        }
        let s = -o.z / d.z;
        if s <= 1e-6 {
            return None;
        }
        let p = o + d * s;
        if leaf.in_ellipse(p.x, p.y) {
            Some(s) // dir.z == 1, so the parameter is the camera depth
        } else {
            None
        }
    } else {
        // Cylinder arc: in the (y, z) leaf plane the surface lies on the
        // circle of radius |1/k| centered at (0, 1/k).
        let k = leaf.curvature;
        let r = 1.0 / k;
        let a = d.y * d.y + d.z * d.z;
        if a < 1e-18 {
            return None;
        }
        let oz = o.z - r;
        let b = 2.0 * (o.y * d.y + oz * d.z);
        let c = o.y * o.y + oz * oz - r * r;
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 {
            return None;
        }
        let sq = disc.sqrt();
        let mut roots = [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)];
        if roots[0] > roots[1] {
            roots.swap(0, 1);
        }
        for s in roots {
            if s <= 1e-6 {
                continue;
            }
            let p = o + d * s;
            // Invert the arc parametrization: sin(theta) = k y, cos(theta) = 1 - k z.
            let theta = (p.y * k).atan2(1.0 - p.z * k);
            let v = theta / k;
            if leaf.in_ellipse(p.x, v) {
                return Some(s);
            }
        }
        None
    }
}

/// Renders a scene to a depth map, per-leaf instance masks, and ground
/// truth.
///
/// Every pixel ray is intersected with every leaf surface analytically; the
/// nearest hit owns the pixel, so masks partition the image. Depth is then
/// perturbed by the noise model: Gaussian error on valid pixels, followed by
/// dropout within `boundary_dropout_px` of each mask boundary.
pub fn render(
    scene: &Scene,
    intrinsics: &CameraIntrinsics,
    noise: &NoiseModel,
    rng_seed: u64,
) -> Result<(Observation, Vec<BinaryMask>, Vec<GtRecord>), SceneGenError> {
    intrinsics
        .validate()
        .map_err(|e| SceneGenError::InvalidParams(e.to_string()))?;
    noise.validate()?;
    scene.validate()?;

    let width = intrinsics.width;
    let height = intrinsics.height;
    let n_px = (width as usize) * (height as usize);
    let cam_leaves = scene.camera_frame_leaves();

    let mut depth = vec![0.0f64; n_px];
    let mut owner: Vec<Option<usize>> = vec![None; n_px];
    for v in 0..height {
        for u in 0..width {
            let ray = intrinsics.pixel_ray(u as f64, v as f64);
            let idx = (v as usize) * (width as usize) + u as usize;
            for (j, (pose, leaf)) in cam_leaves.iter().enumerate() {
                if let Some(s) = intersect_leaf(pose, leaf, ray) {
                    if owner[idx].is_none() || s < depth[idx] {
                        depth[idx] = s;
                        owner[idx] = Some(j);
                    }
                }
            }
        }
    }
    if owner.iter().all(Option::is_none) {
        return Err(SceneGenError::EmptyRender);
    }

    let masks: Vec<BinaryMask> = (0..cam_leaves.len())
        .map(|j| {
            let bits = owner.iter().map(|o| *o == Some(j)).collect();
            BinaryMask::new(width, height, bits).expect("buffer sized to the image")
        })
        .collect();

    let mut rgb = vec![0u8; n_px * 3];
    for (idx, o) in owner.iter().enumerate() {
        if let Some(j) = o {
            let color = LEAF_PALETTE[j % LEAF_PALETTE.len()];
            rgb[idx * 3..idx * 3 + 3].copy_from_slice(&color);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    if noise.depth_sigma > 0.0 {
        let gauss = Normal::new(0.0, noise.depth_sigma)
            .map_err(|e| SceneGenError::InvalidParams(e.to_string()))?;
        for d in depth.iter_mut() {
            if *d > 0.0 {
                *d = (*d + gauss.sample(&mut rng)).max(1e-4);
            }
        }
    }
    if noise.boundary_dropout_px > 0 && noise.dropout_rate > 0.0 {
        for mask in &masks {
            let band = boundary_band(mask, noise.boundary_dropout_px);
            for (idx, in_band) in band.iter().enumerate() {
                if *in_band && depth[idx] > 0.0 && rng.random::<f64>() < noise.dropout_rate {
                    depth[idx] = 0.0;
                }
            }
        }
    }

    let depth_map = DepthMap::new(width, height, depth.iter().map(|d| *d as f32).collect())
        .expect("renderer emits valid depth");
    let observation = Observation {
        depth: depth_map,
        rgb: Some(RgbImage {
            width,
            height,
            data: rgb,
        }),
    };

    let gt = cam_leaves
        .iter()
        .enumerate()
        .map(|(j, (pose, leaf))| GtRecord {
            leaf_id: j,
            pose: *pose,
            center: pose.position,
            normal: pose.z_axis(),
            length: leaf.length,
            width: leaf.width,
        })
        .collect();

    Ok((observation, masks, gt))
}

/// Mask pixels within `band_px` (Chebyshev) of the mask boundary, computed
/// by repeated 8-neighborhood erosion. Pixels at the image border count as
/// boundary.
pub fn boundary_band(mask: &BinaryMask, band_px: u32) -> Vec<bool> {
    let w = mask.width() as i64;
    let h = mask.height() as i64;
    let mut core: Vec<bool> = mask.bits().to_vec();
    for _ in 0..band_px {
        let snapshot = core.clone();
        for y in 0..h {
            for x in 0..w {
                let idx = (y * w + x) as usize;
                if !snapshot[idx] {
                    continue;
                }
                let mut survives = true;
                'nb: for dy in -1..=1i64 {
                    for dx in -1..=1i64 {
                        let (nx, ny) = (x + dx, y + dy);
                        if nx < 0 || ny < 0 || nx >= w || ny >= h {
                            survives = false;
                            break 'nb;
                        }
                        if !snapshot[(ny * w + nx) as usize] {
                            survives = false;
                            break 'nb;
                        }
                    }
                }
                if !survives {
                    core[idx] = false;
                }
            }
        }
    }
    mask.bits()
        .iter()
        .zip(core.iter())
        .map(|(m, c)| *m && !*c)
        .collect()
}
