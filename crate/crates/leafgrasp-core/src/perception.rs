//! Perception pipeline: masked RGB-D observations to ranked 6D pose sets.
//!
//! For each instance mask the pipeline runs
//! mask -> back-projection -> z-score outlier filter -> central point ->
//! PCA normal -> tangent frame -> five pose candidates,
//! then sorts the surviving leaves by distance to the camera. Per-leaf
//! failures (empty clouds, degenerate geometry) drop that leaf with a
//! recorded reason instead of failing the batch.

use crate::geometry::{quat_from_basis, rotate_about_axis, CameraIntrinsics, Pose, Vec3};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use thiserror::Error;

/// Z-score threshold of the outlier filter; a 98% two-sided confidence
/// interval on each axis.
pub const Z_SCORE_THRESHOLD: f64 = 2.33;

/// Intrinsic rotations (radians, about the leaf normal) that derive pose
/// candidates 2..=5 from the initial tangent-frame pose.
pub const POSE_ROTATION_SCHEDULE: [f64; 4] = [-FRAC_PI_4, -FRAC_PI_2, -3.0 * FRAC_PI_4, PI];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PerceptionError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("empty cloud: no masked pixel carries depth")]
    EmptyCloud,
    #[error("degenerate cloud: fewer than 3 non-collinear points")]
    DegenerateCloud,
    #[error("degenerate tangent: edge reference is collinear with the normal")]
    DegenerateTangent,
}

// ---------------------------------------------------------------------------
// Raster types
// ---------------------------------------------------------------------------

/// Row-major depth map in meters; 0 encodes a missing measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    values: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: u32, height: u32, values: Vec<f32>) -> Result<Self, PerceptionError> {
        if values.len() != (width as usize) * (height as usize) {
            return Err(PerceptionError::DimensionMismatch(format!(
                "depth buffer holds {} values, expected {}x{}",
                values.len(),
                width,
                height
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(PerceptionError::InvalidData(format!(
                "depth value {bad} is negative or non-finite"
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, u: u32, v: u32) -> f32 {
        self.values[(v as usize) * (self.width as usize) + u as usize]
    }
}

/// Row-major binary instance mask, dimensioned like its depth map.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32, bits: Vec<bool>) -> Result<Self, PerceptionError> {
        if bits.len() != (width as usize) * (height as usize) {
            return Err(PerceptionError::DimensionMismatch(format!(
                "mask holds {} bits, expected {}x{}",
                bits.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, u: u32, v: u32) -> bool {
        self.bits[(v as usize) * (self.width as usize) + u as usize]
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }
}

/// An RGB-D observation. The color image is carried for provenance and
/// visualization only; the pipeline consumes depth exclusively.
#[derive(Debug, Clone)]
pub struct Observation {
    pub depth: DepthMap,
    pub rgb: Option<RgbImage>,
}

/// Packed 8-bit RGB image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

// ---------------------------------------------------------------------------
// Cloud and frame types
// ---------------------------------------------------------------------------

/// One leaf's 3D point set in the camera frame.
///
/// Points preserve row-major pixel order from back-projection, which makes
/// "smallest index" tie-breaks equivalent to "smallest row-major pixel".
#[derive(Debug, Clone, PartialEq)]
pub struct LeafCloud {
    pub leaf_id: usize,
    pub points: Vec<Vec3>,
    pub filtered: bool,
}

impl LeafCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Component-wise mean.
    pub fn centroid(&self) -> Vec3 {
        let sum = self
            .points
            .iter()
            .fold(Vec3::ZERO, |acc, p| acc + *p);
        sum / self.points.len() as f64
    }
}

/// Orthonormal local frame on a leaf surface: tangent toward the stem-side
/// edge, bitangent `n x t`, normal toward the viewpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeafFrame {
    pub center: Vec3,
    pub tangent: Vec3,
    pub bitangent: Vec3,
    pub normal: Vec3,
}

/// A leaf's five candidate 6D poses in the camera frame, all sharing the
/// central point as position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseSet {
    pub leaf_id: usize,
    pub camera_distance: f64,
    pub poses: Vec<Pose>,
}

/// A leaf dropped by `perceive`, with the stage error that killed it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedLeaf {
    pub leaf_id: usize,
    pub reason: String,
}

/// Everything `perceive` produces: surviving pose sets sorted by camera
/// distance, plus the drop log.
#[derive(Debug, Clone, PartialEq)]
pub struct PerceptionOutput {
    pub posesets: Vec<PoseSet>,
    pub dropped: Vec<DroppedLeaf>,
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Element-wise mask application: output pixel carries the depth where the
/// mask is set and 0 elsewhere.
pub fn mask_depth(depth: &DepthMap, mask: &BinaryMask) -> Result<DepthMap, PerceptionError> {
    if depth.width != mask.width || depth.height != mask.height {
        return Err(PerceptionError::DimensionMismatch(format!(
            "depth {}x{} vs mask {}x{}",
            depth.width, depth.height, mask.width, mask.height
        )));
    }
    let values = depth
        .values
        .iter()
        .zip(mask.bits.iter())
        .map(|(d, m)| if *m { *d } else { 0.0 })
        .collect();
    Ok(DepthMap {
        width: depth.width,
        height: depth.height,
        values,
    })
}

/// Back-projects every pixel with positive depth through the pinhole model:
/// `((u - cx) d / fx, (v - cy) d / fy, d)`. Pixels with missing depth
/// contribute no point.
pub fn backproject(
    masked: &DepthMap,
    intrinsics: &CameraIntrinsics,
    leaf_id: usize,
) -> Result<LeafCloud, PerceptionError> {
    let mut points = Vec::new();
    for v in 0..masked.height {
        for u in 0..masked.width {
            let d = masked.get(u, v) as f64;
            if d > 0.0 {
                points.push(Vec3::new(
                    (u as f64 - intrinsics.cx) * d / intrinsics.fx,
                    (v as f64 - intrinsics.cy) * d / intrinsics.fy,
                    d,
                ));
            }
        }
    }
    if points.is_empty() {
        return Err(PerceptionError::EmptyCloud);
    }
    Ok(LeafCloud {
        leaf_id,
        points,
        filtered: false,
    })
}

/// Per-axis mean and population standard deviation of a cloud.
pub fn cloud_statistics(points: &[Vec3]) -> ([f64; 3], [f64; 3]) {
    let n = points.len() as f64;
    let mut mean = [0.0; 3];
    for p in points {
        let a = p.as_array();
        for k in 0..3 {
            mean[k] += a[k];
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = [0.0; 3];
    for p in points {
        let a = p.as_array();
        for k in 0..3 {
            let d = a[k] - mean[k];
            var[k] += d * d;
        }
    }
    let sigma = [
        (var[0] / n).sqrt(),
        (var[1] / n).sqrt(),
        (var[2] / n).sqrt(),
    ];
    (mean, sigma)
}

/// Removes points whose per-axis z-score exceeds `z_th` on any axis, using
/// the mean and population standard deviation of the input cloud.
///
/// Axes with zero spread are skipped (every point passes them), and clouds
/// with fewer than 4 points are returned unfiltered: z-scores on so few
/// samples carry no information.
pub fn filter_outliers(cloud: &LeafCloud, z_th: f64) -> LeafCloud {
    if cloud.points.len() < 4 {
        return LeafCloud {
            leaf_id: cloud.leaf_id,
            points: cloud.points.clone(),
            filtered: true,
        };
    }
    let (mean, sigma) = cloud_statistics(&cloud.points);
    let points = cloud
        .points
        .iter()
        .copied()
        .filter(|p| {
            let a = p.as_array();
            (0..3).all(|k| sigma[k] == 0.0 || ((a[k] - mean[k]) / sigma[k]).abs() <= z_th)
        })
        .collect();
    LeafCloud {
        leaf_id: cloud.leaf_id,
        points,
        filtered: true,
    }
}

/// Component-wise median; even-sized axes take the mean of the two middle
/// values.
pub fn component_median(points: &[Vec3]) -> Vec3 {
    let median_of = |mut axis: Vec<f64>| -> f64 {
        axis.sort_by(f64::total_cmp);
        let n = axis.len();
        if n % 2 == 1 {
            axis[n / 2]
        } else {
            0.5 * (axis[n / 2 - 1] + axis[n / 2])
        }
    };
    Vec3::new(
        median_of(points.iter().map(|p| p.x).collect()),
        median_of(points.iter().map(|p| p.y).collect()),
        median_of(points.iter().map(|p| p.z).collect()),
    )
}

/// The cloud member closest to the component-wise median; ties keep the
/// earliest point.
pub fn central_point(cloud: &LeafCloud) -> Result<Vec3, PerceptionError> {
    if cloud.points.is_empty() {
        return Err(PerceptionError::EmptyCloud);
    }
    let med = component_median(&cloud.points);
    let mut best = cloud.points[0];
    let mut best_d = (best - med).norm_squared();
    for p in &cloud.points[1..] {
        let d = (*p - med).norm_squared();
        if d < best_d {
            best_d = d;
            best = *p;
        }
    }
    Ok(best)
}

/// Best-fit plane normal: the eigenvector of the centered covariance with
/// the smallest eigenvalue, computed by SVD and oriented toward the
/// viewpoint.
///
/// When the two smallest eigenvalues tie within 1e-12 the candidate whose
/// alignment with the viewpoint direction is strongest wins, which keeps the
/// output deterministic.
pub fn estimate_normal(cloud: &LeafCloud, viewpoint: Vec3) -> Result<Vec3, PerceptionError> {
    if cloud.points.is_empty() {
        return Err(PerceptionError::EmptyCloud);
    }
    if cloud.points.len() < 3 {
        return Err(PerceptionError::DegenerateCloud);
    }
    let centroid = cloud.centroid();
    let mut cov = nalgebra::Matrix3::<f64>::zeros();
    for p in &cloud.points {
        let d: nalgebra::Vector3<f64> = (*p - centroid).into();
        cov += d * d.transpose();
    }
    cov /= cloud.points.len() as f64;

    let svd = cov.svd(true, false);
    let u = svd.u.expect("requested U");
    let mut order = [0usize, 1, 2];
    order.sort_by(|a, b| svd.singular_values[*a].total_cmp(&svd.singular_values[*b]));
    let (smallest, second) = (order[0], order[1]);
    // For a PSD covariance the singular values are the eigenvalues.
    if svd.singular_values[second] <= svd.singular_values[order[2]] * 1e-12 {
        return Err(PerceptionError::DegenerateCloud);
    }

    let view_dir = viewpoint - centroid;
    let pick = if (svd.singular_values[second] - svd.singular_values[smallest]).abs() <= 1e-12 {
        let cand_a: Vec3 = u.column(smallest).clone_owned().into();
        let cand_b: Vec3 = u.column(second).clone_owned().into();
        if cand_a.dot(view_dir).abs() >= cand_b.dot(view_dir).abs() {
            smallest
        } else {
            second
        }
    } else {
        smallest
    };

    let mut normal: Vec3 = u.column(pick).clone_owned().into();
    normal = normal.normalized().ok_or(PerceptionError::DegenerateCloud)?;
    if normal.dot(view_dir) < 0.0 {
        normal = -normal;
    }
    Ok(normal)
}

/// Builds the leaf's tangent frame from an edge reference point.
///
/// The reference is the uppermost cloud point along the camera's vertical
/// axis (minimum y under the optical convention; ties keep the earliest
/// point). Its offset from the center is projected into the leaf plane to
/// give the tangent, and the bitangent closes the right-handed triad.
pub fn leaf_frame(
    cloud: &LeafCloud,
    center: Vec3,
    normal: Vec3,
) -> Result<LeafFrame, PerceptionError> {
    if cloud.points.is_empty() {
        return Err(PerceptionError::EmptyCloud);
    }
    let mut edge = cloud.points[0];
    for p in &cloud.points[1..] {
        if p.y < edge.y {
            edge = *p;
        }
    }
    let offset = edge - center;
    let in_plane = offset - normal * offset.dot(normal);
    if in_plane.norm() < 1e-9 {
        return Err(PerceptionError::DegenerateTangent);
    }
    let tangent = in_plane
        .normalized()
        .ok_or(PerceptionError::DegenerateTangent)?;
    let bitangent = normal.cross(tangent);
    Ok(LeafFrame {
        center,
        tangent,
        bitangent,
        normal,
    })
}

/// Expands a leaf frame into its five pose candidates: the frame itself plus
/// four intrinsic rotations about the normal per the fixed schedule. All
/// five share the frame center as position.
pub fn candidate_poses(frame: &LeafFrame) -> PoseSet {
    let base = quat_from_basis(frame.tangent, frame.bitangent, frame.normal)
        .expect("leaf frame is orthonormal by construction");
    let mut poses = Vec::with_capacity(5);
    poses.push(Pose::new(frame.center, base));
    for alpha in POSE_ROTATION_SCHEDULE {
        // The frame maps body z onto the leaf normal, so an intrinsic
        // rotation about body z is a rotation about n.
        let q = rotate_about_axis(base, Vec3::unit_z(), alpha).expect("unit axis");
        poses.push(Pose::new(frame.center, q));
    }
    PoseSet {
        leaf_id: frame_leaf_id_placeholder(),
        camera_distance: frame.center.norm(),
        poses,
    }
}

// Pose sets fabricated straight from a frame have no leaf identity yet; the
// pipeline assigns it.
fn frame_leaf_id_placeholder() -> usize {
    usize::MAX
}

fn process_leaf(
    leaf_id: usize,
    depth: &DepthMap,
    mask: &BinaryMask,
    intrinsics: &CameraIntrinsics,
) -> Result<PoseSet, PerceptionError> {
    let masked = mask_depth(depth, mask)?;
    let raw = backproject(&masked, intrinsics, leaf_id)?;
    let cloud = filter_outliers(&raw, Z_SCORE_THRESHOLD);
    let center = central_point(&cloud)?;
    let normal = estimate_normal(&cloud, Vec3::ZERO)?;
    let frame = leaf_frame(&cloud, center, normal)?;
    let mut poseset = candidate_poses(&frame);
    poseset.leaf_id = leaf_id;
    Ok(poseset)
}

/// Runs the full pipeline over every mask of an observation.
///
/// Leaves whose stage fails are dropped with the reason recorded; the
/// survivors come back sorted by ascending distance to the camera.
pub fn perceive(
    obs: &Observation,
    masks: &[BinaryMask],
    intrinsics: &CameraIntrinsics,
) -> PerceptionOutput {
    let mut posesets = Vec::new();
    let mut dropped = Vec::new();
    for (leaf_id, mask) in masks.iter().enumerate() {
        match process_leaf(leaf_id, &obs.depth, mask, intrinsics) {
            Ok(ps) => posesets.push(ps),
            Err(err) => {
                log::debug!("leaf {leaf_id} dropped: {err}");
                dropped.push(DroppedLeaf {
                    leaf_id,
                    reason: err.to_string(),
                });
            }
        }
    }
    posesets.sort_by(|a, b| a.camera_distance.total_cmp(&b.camera_distance));
    PerceptionOutput { posesets, dropped }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::UnitQuat;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn constant_depth(width: u32, height: u32, d: f32) -> DepthMap {
        DepthMap::new(width, height, vec![d; (width * height) as usize]).unwrap()
    }

    fn full_mask(width: u32, height: u32) -> BinaryMask {
        BinaryMask::new(width, height, vec![true; (width * height) as usize]).unwrap()
    }

    fn cloud_of(points: Vec<Vec3>) -> LeafCloud {
        LeafCloud {
            leaf_id: 0,
            points,
            filtered: false,
        }
    }

    #[test]
    fn mask_depth_all_true_is_identity() {
        let depth = constant_depth(4, 3, 1.5);
        let out = mask_depth(&depth, &full_mask(4, 3)).unwrap();
        assert_eq!(out, depth);
    }

    #[test]
    fn mask_depth_all_false_zeroes_everything() {
        let depth = constant_depth(4, 3, 1.5);
        let mask = BinaryMask::new(4, 3, vec![false; 12]).unwrap();
        let out = mask_depth(&depth, &mask).unwrap();
        assert!(out.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn mask_depth_checkerboard() {
        let depth = constant_depth(4, 4, 1.0);
        let bits: Vec<bool> = (0..16).map(|i| (i / 4 + i % 4) % 2 == 0).collect();
        let mask = BinaryMask::new(4, 4, bits.clone()).unwrap();
        let out = mask_depth(&depth, &mask).unwrap();
        for (v, m) in out.values().iter().zip(bits.iter()) {
            assert_eq!(*v, if *m { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn mask_depth_rejects_dimension_mismatch() {
        let depth = constant_depth(4, 3, 1.0);
        let mask = full_mask(3, 4);
        assert!(matches!(
            mask_depth(&depth, &mask),
            Err(PerceptionError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn backproject_principal_point_ray() {
        let k = CameraIntrinsics::new(10.0, 10.0, 2.0, 2.0, 5, 5);
        let mut values = vec![0.0f32; 25];
        values[2 * 5 + 2] = 2.0; // pixel (cx, cy)
        let depth = DepthMap::new(5, 5, values).unwrap();
        let cloud = backproject(&depth, &k, 0).unwrap();
        assert_eq!(cloud.points.len(), 1);
        assert!((cloud.points[0] - Vec3::new(0.0, 0.0, 2.0)).norm() < 1e-12);
    }

    #[test]
    fn backproject_focal_length_tangent() {
        let k = CameraIntrinsics::new(10.0, 10.0, 2.0, 2.0, 16, 5);
        let mut values = vec![0.0f32; 16 * 5];
        values[2 * 16 + 12] = 1.0; // pixel (cx + fx, cy)
        let depth = DepthMap::new(16, 5, values).unwrap();
        let cloud = backproject(&depth, &k, 0).unwrap();
        assert!((cloud.points[0] - Vec3::new(1.0, 0.0, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn backproject_empty_when_no_depth() {
        let k = CameraIntrinsics::new(10.0, 10.0, 2.0, 2.0, 5, 5);
        let depth = constant_depth(5, 5, 0.0);
        assert!(matches!(
            backproject(&depth, &k, 0),
            Err(PerceptionError::EmptyCloud)
        ));
    }

    #[test]
    fn backprojection_roundtrips_to_pixels() {
        let k = CameraIntrinsics::new(75.0, 60.0, 16.0, 12.0, 32, 24);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let values: Vec<f32> = (0..32 * 24)
            .map(|_| {
                if rng.random::<f64>() < 0.3 {
                    rng.random_range(0.3..2.0)
                } else {
                    0.0
                }
            })
            .collect();
        let valid = values.iter().filter(|v| **v > 0.0).count();
        let depth = DepthMap::new(32, 24, values).unwrap();
        let cloud = backproject(&depth, &k, 0).unwrap();
        assert_eq!(cloud.points.len(), valid);
        let mut idx = 0;
        for v in 0..24u32 {
            for u in 0..32u32 {
                let d = depth.get(u, v);
                if d > 0.0 {
                    let p = cloud.points[idx];
                    let (pu, pv) = k.project(p).unwrap();
                    assert!((pu - u as f64).abs() < 0.5 && (pv - v as f64).abs() < 0.5);
                    assert_eq!(p.z as f32, d);
                    idx += 1;
                }
            }
        }
    }

    #[test]
    fn filter_keeps_tight_cloud_unchanged() {
        // All points within one sigma of the mean on every axis.
        let points = vec![
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(0.01, 0.0, 1.0),
            Vec3::new(0.0, 0.01, 1.01),
            Vec3::new(0.01, 0.01, 1.01),
        ];
        let out = filter_outliers(&cloud_of(points.clone()), Z_SCORE_THRESHOLD);
        assert_eq!(out.points, points);
        assert!(out.filtered);
    }

    #[test]
    fn filter_removes_injected_outlier() {
        // Oracle: compute the z-score of the injected point by hand from the
        // pre-filter statistics and confirm it exceeds the threshold.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut points: Vec<Vec3> = (0..100)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-0.01..0.01),
                    rng.random_range(-0.01..0.01),
                    1.0 + rng.random_range(-0.002..0.002),
                )
            })
            .collect();
        let outlier = Vec3::new(0.0, 0.0, 5.0);
        points.push(outlier);

        let (mean, sigma) = cloud_statistics(&points);
        let z_out = ((outlier.z - mean[2]) / sigma[2]).abs();
        assert!(z_out > Z_SCORE_THRESHOLD, "oracle z-score {z_out}");

        let out = filter_outliers(&cloud_of(points.clone()), Z_SCORE_THRESHOLD);
        assert!(!out.points.contains(&outlier));
        for p in &out.points {
            let a = p.as_array();
            for k in 0..3 {
                if sigma[k] > 0.0 {
                    assert!(((a[k] - mean[k]) / sigma[k]).abs() <= Z_SCORE_THRESHOLD);
                }
            }
        }
    }

    #[test]
    fn filter_skips_degenerate_axes() {
        let points = vec![Vec3::new(0.5, -0.25, 1.0); 10];
        let out = filter_outliers(&cloud_of(points.clone()), Z_SCORE_THRESHOLD);
        assert_eq!(out.points, points);
    }

    #[test]
    fn filter_passes_small_clouds_through() {
        let points = vec![
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(0.0, 0.0, 2.0),
            Vec3::new(0.0, 0.0, 30.0),
        ];
        let out = filter_outliers(&cloud_of(points.clone()), Z_SCORE_THRESHOLD);
        assert_eq!(out.points, points);
        assert!(out.filtered);
    }

    #[test]
    fn central_point_single_point() {
        let c = cloud_of(vec![Vec3::new(0.3, 0.4, 0.5)]);
        assert_eq!(central_point(&c).unwrap(), Vec3::new(0.3, 0.4, 0.5));
    }

    #[test]
    fn central_point_symmetric_grid_center() {
        let mut points = Vec::new();
        for i in -1..=1 {
            for j in -1..=1 {
                points.push(Vec3::new(i as f64 * 0.1, j as f64 * 0.1, 1.0));
            }
        }
        let c = cloud_of(points);
        assert_eq!(central_point(&c).unwrap(), Vec3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn central_point_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let points: Vec<Vec3> = (0..50)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(0.5..2.0),
                )
            })
            .collect();
        let med = component_median(&points);
        // Exhaustive argmin, scanning in order with strict improvement.
        let mut best = 0usize;
        for i in 1..points.len() {
            if (points[i] - med).norm_squared() < (points[best] - med).norm_squared() {
                best = i;
            }
        }
        let c = cloud_of(points.clone());
        assert_eq!(central_point(&c).unwrap(), points[best]);
    }

    #[test]
    fn normal_of_frontal_plane_points_at_camera() {
        let mut points = Vec::new();
        for i in 0..5 {
            for j in 0..4 {
                points.push(Vec3::new(i as f64 * 0.01, j as f64 * 0.01, 0.5));
            }
        }
        let n = estimate_normal(&cloud_of(points), Vec3::ZERO).unwrap();
        assert!((n - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-9);
    }

    #[test]
    fn normal_of_tilted_plane_matches_analytic() {
        // Plane x + z = 1, normal +-(1,0,1)/sqrt(2).
        let mut points = Vec::new();
        for i in 0..6 {
            for j in 0..6 {
                let x = 0.3 + i as f64 * 0.02;
                let y = -0.05 + j as f64 * 0.02;
                points.push(Vec3::new(x, y, 1.0 - x));
            }
        }
        let n = estimate_normal(&cloud_of(points), Vec3::ZERO).unwrap();
        let expected = Vec3::new(-1.0, 0.0, -1.0) * (1.0 / 2.0_f64.sqrt());
        assert!((n - expected).norm() < 1e-6, "normal {n:?}");
    }

    #[test]
    fn normal_tolerates_small_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let analytic = Vec3::new(-1.0, 0.0, -1.0) * (1.0 / 2.0_f64.sqrt());
        let mut points = Vec::new();
        for i in 0..20 {
            for j in 0..20 {
                let x = 0.3 + i as f64 * 0.005;
                let y = -0.05 + j as f64 * 0.005;
                let noise = rng.random_range(-1e-3..1e-3);
                points.push(Vec3::new(x, y, 1.0 - x) + analytic * noise);
            }
        }
        let n = estimate_normal(&cloud_of(points), Vec3::ZERO).unwrap();
        let angle = n.dot(analytic).clamp(-1.0, 1.0).acos();
        assert!(angle < 1.0_f64.to_radians(), "angle {angle}");
    }

    #[test]
    fn normal_rejects_collinear_cloud() {
        let points: Vec<Vec3> = (0..10)
            .map(|i| Vec3::new(i as f64 * 0.01, 0.0, 1.0))
            .collect();
        assert!(matches!(
            estimate_normal(&cloud_of(points), Vec3::ZERO),
            Err(PerceptionError::DegenerateCloud)
        ));
        assert!(matches!(
            estimate_normal(&cloud_of(vec![Vec3::new(0.0, 0.0, 1.0)]), Vec3::ZERO),
            Err(PerceptionError::DegenerateCloud)
        ));
    }

    #[test]
    fn leaf_frame_planar_example() {
        // Planar leaf in z = 1; uppermost point straight above the center.
        let points = vec![
            Vec3::new(0.0, -0.05, 1.0),
            Vec3::new(0.03, 0.0, 1.0),
            Vec3::new(-0.03, 0.0, 1.0),
            Vec3::new(0.0, 0.05, 1.0),
        ];
        let center = Vec3::new(0.0, 0.0, 1.0);
        let n = Vec3::new(0.0, 0.0, -1.0);
        let frame = leaf_frame(&cloud_of(points), center, n).unwrap();
        assert!((frame.tangent - Vec3::new(0.0, -1.0, 0.0)).norm() < 1e-12);
        assert!((frame.bitangent - n.cross(frame.tangent)).norm() < 1e-12);
    }

    #[test]
    fn leaf_frame_degenerate_when_edge_along_normal() {
        let points = vec![
            Vec3::new(0.0, -0.05, 1.0),
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(0.0, 0.05, 1.0),
        ];
        let center = Vec3::new(0.0, 0.0, 1.0);
        // Normal pointing along the offset to the uppermost point.
        let n = Vec3::new(0.0, -1.0, 0.0);
        assert!(matches!(
            leaf_frame(&cloud_of(points), center, n),
            Err(PerceptionError::DegenerateTangent)
        ));
    }

    #[test]
    fn leaf_frame_is_orthonormal_on_random_planar_clouds() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..20 {
            let q = UnitQuat::from_axis_angle(
                Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
                .normalized()
                .unwrap_or(Vec3::unit_x()),
                rng.random_range(-0.5..0.5),
            );
            let origin = Vec3::new(0.0, 0.0, 0.6);
            let points: Vec<Vec3> = (0..40)
                .map(|_| {
                    let u = rng.random_range(-0.04..0.04);
                    let v = rng.random_range(-0.02..0.02);
                    origin + q.rotate(Vec3::new(u, v, 0.0))
                })
                .collect();
            let cloud = cloud_of(points);
            let center = central_point(&cloud).unwrap();
            let n = estimate_normal(&cloud, Vec3::ZERO).unwrap();
            if let Ok(frame) = leaf_frame(&cloud, center, n) {
                assert!(frame.tangent.dot(frame.normal).abs() < 1e-9);
                assert!(frame.bitangent.dot(frame.normal).abs() < 1e-9);
                assert!(frame.bitangent.dot(frame.tangent).abs() < 1e-9);
                assert_relative_eq!(frame.tangent.norm(), 1.0, epsilon = 1e-9);
                assert_relative_eq!(frame.bitangent.norm(), 1.0, epsilon = 1e-9);
            }
        }
    }

    fn identity_frame() -> LeafFrame {
        LeafFrame {
            center: Vec3::new(0.0, 0.0, 0.5),
            tangent: Vec3::unit_x(),
            bitangent: Vec3::unit_y(),
            normal: Vec3::unit_z(),
        }
    }

    #[test]
    fn candidate_poses_share_position_and_schedule() {
        let ps = candidate_poses(&identity_frame());
        assert_eq!(ps.poses.len(), 5);
        for pose in &ps.poses {
            assert_eq!(pose.position, Vec3::new(0.0, 0.0, 0.5));
        }
        // Pose 5 is the half-turn of pose 1 about the normal.
        let expected = ps.poses[0].orientation * UnitQuat::rot_z(std::f64::consts::PI);
        assert!(ps.poses[4].orientation.angle_to(expected) < 1e-12);
    }

    #[test]
    fn candidate_poses_preserve_normal_column() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..25 {
            let axis = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
            .normalized()
            .unwrap_or(Vec3::unit_z());
            let q = UnitQuat::from_axis_angle(axis, rng.random_range(-3.0..3.0));
            let frame = LeafFrame {
                center: Vec3::new(0.1, -0.2, 0.7),
                tangent: q.rotate(Vec3::unit_x()),
                bitangent: q.rotate(Vec3::unit_y()),
                normal: q.rotate(Vec3::unit_z()),
            };
            let ps = candidate_poses(&frame);
            for (i, alpha) in POSE_ROTATION_SCHEDULE.iter().enumerate() {
                let pose = &ps.poses[i + 1];
                // Normal column fixed under rotations about the normal.
                assert!((pose.z_axis() - frame.normal).norm() < 1e-9);
                // Relative rotation is exactly the scheduled angle about n
                // (body z); the half-turn keeps its axis-sign ambiguity.
                let rel = ps.poses[0].orientation.inverse() * pose.orientation;
                let expected = UnitQuat::rot_z(*alpha);
                assert!(
                    rel.angle_to(expected) < 1e-9,
                    "pose {} off schedule by {}",
                    i + 2,
                    rel.angle_to(expected)
                );
            }
        }
    }

    #[test]
    fn perceive_empty_mask_list() {
        let obs = Observation {
            depth: constant_depth(4, 4, 1.0),
            rgb: None,
        };
        let k = CameraIntrinsics::new(10.0, 10.0, 2.0, 2.0, 4, 4);
        let out = perceive(&obs, &[], &k);
        assert!(out.posesets.is_empty());
        assert!(out.dropped.is_empty());
    }

    #[test]
    fn perceive_drops_mask_without_depth() {
        let k = CameraIntrinsics::new(20.0, 20.0, 8.0, 8.0, 16, 16);
        let mut values = vec![0.0f32; 256];
        // Left half carries a frontal plane; right half is missing.
        for v in 2..14u32 {
            for u in 1..7u32 {
                values[(v * 16 + u) as usize] = 0.8;
            }
        }
        let depth = DepthMap::new(16, 16, values).unwrap();
        let mut left_bits = vec![false; 256];
        let mut right_bits = vec![false; 256];
        for v in 0..16u32 {
            for u in 0..16u32 {
                if u < 8 {
                    left_bits[(v * 16 + u) as usize] = true;
                } else {
                    right_bits[(v * 16 + u) as usize] = true;
                }
            }
        }
        let masks = vec![
            BinaryMask::new(16, 16, left_bits).unwrap(),
            BinaryMask::new(16, 16, right_bits).unwrap(),
        ];
        let obs = Observation { depth, rgb: None };
        let out = perceive(&obs, &masks, &k);
        assert_eq!(out.posesets.len(), 1);
        assert_eq!(out.posesets[0].leaf_id, 0);
        assert_eq!(out.dropped.len(), 1);
        assert_eq!(out.dropped[0].leaf_id, 1);
        assert!(out.dropped[0].reason.contains("empty cloud"));
    }

    proptest! {
        #[test]
        fn mask_depth_is_idempotent(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let values: Vec<f32> = (0..48).map(|_| rng.random_range(0.0..2.0)).collect();
            let bits: Vec<bool> = (0..48).map(|_| rng.random::<bool>()).collect();
            let depth = DepthMap::new(8, 6, values).unwrap();
            let mask = BinaryMask::new(8, 6, bits).unwrap();
            let once = mask_depth(&depth, &mask).unwrap();
            let twice = mask_depth(&once, &mask).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn filter_output_is_subset(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(4..80usize);
            let points: Vec<Vec3> = (0..n)
                .map(|_| Vec3::new(
                    rng.random_range(-0.1..0.1),
                    rng.random_range(-0.1..0.1),
                    rng.random_range(0.4..0.8),
                ))
                .collect();
            let cloud = cloud_of(points.clone());
            let out = filter_outliers(&cloud, Z_SCORE_THRESHOLD);
            prop_assert!(out.points.len() <= points.len());
            let mut cursor = 0usize;
            for p in &out.points {
                // Subset test that also respects ordering.
                while cursor < points.len() && points[cursor] != *p {
                    cursor += 1;
                }
                prop_assert!(cursor < points.len(), "filtered point not in input order");
                cursor += 1;
            }
        }

        #[test]
        fn perceive_orders_by_camera_distance(seed in 0u64..50) {
            let k = CameraIntrinsics::new(30.0, 30.0, 16.0, 12.0, 32, 24);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut values = vec![0.0f32; 32 * 24];
            let mut masks = Vec::new();
            for b in 0..3u32 {
                let base = rng.random_range(0.4..1.5);
                let mut bits = vec![false; 32 * 24];
                let u0 = b * 10 + 1;
                for v in 4..20u32 {
                    for u in u0..u0 + 8 {
                        let idx = (v * 32 + u) as usize;
                        // Slight tilt keeps the cloud non-degenerate.
                        values[idx] = base + 0.02 * (u - u0) as f32 / 8.0;
                        bits[idx] = true;
                    }
                }
                masks.push(BinaryMask::new(32, 24, bits).unwrap());
            }
            let obs = Observation { depth: DepthMap::new(32, 24, values).unwrap(), rgb: None };
            let out = perceive(&obs, &masks, &k);
            for pair in out.posesets.windows(2) {
                prop_assert!(pair[0].camera_distance <= pair[1].camera_distance);
            }
            for ps in &out.posesets {
                prop_assert_eq!(ps.poses.len(), 5);
            }
        }
    }
}
