//! Manipulation workflow and evaluation metrics.
//!
//! For each batch: pose sets are transformed into the robot base frame,
//! leaves become collision obstacles, and targets are processed in camera
//! distance order. Each leaf's five pose candidates are tried in turn --
//! IK, then RRT-Connect, then simulated execution and grasp verification --
//! stopping at the first verified grasp, after which a synthetic
//! hyperspectral sample is acquired. Batches aggregate into the
//! leaves-per-batch (LPB) availability and success tables.

use crate::derive_seed;
use crate::geometry::{Pose, Transform, Vec3};
use crate::kinematics::{fk, solve_ik, ArmModel, IkConfig, JointVector};
use crate::perception::PoseSet;
use crate::planning::{
    collides, plan_rrtc, shortcut, CollisionScene, ObstacleBox, PlanError, PlannerConfig,
    RobotGeometry,
};
use crate::scenegen::GtRecord;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorkflowError {
    #[error("empty input: no batch runs to aggregate")]
    EmptyInput,
    #[error("degenerate reference: white level must exceed dark level at every band")]
    DegenerateReference,
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Grasp verification tolerances. The positional bound reflects
/// centimeter-level gripper accuracy; the angular bound is a config knob for
/// how much normal misalignment a finger gripper tolerates. The check is
/// sign-insensitive: a leaf is graspable from either face.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraspConfig {
    pub tol_pos: f64,
    pub tol_ang: f64,
    /// Optional gripper standoff along the negative leaf normal (m).
    pub approach_offset: f64,
}

impl Default for GraspConfig {
    fn default() -> Self {
        Self {
            tol_pos: 0.01,
            tol_ang: 0.35,
            approach_offset: 0.0,
        }
    }
}

/// Synthetic VIS-NIR spectrometer: band grid plus white/dark reference
/// levels in raw counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorConfig {
    pub lambda_min_nm: f64,
    pub lambda_max_nm: f64,
    pub step_nm: f64,
    pub white_level: f64,
    pub dark_level: f64,
    pub noise_sigma: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            lambda_min_nm: 400.0,
            lambda_max_nm: 1010.0,
            step_nm: 5.0,
            white_level: 4096.0,
            dark_level: 128.0,
            noise_sigma: 2.0,
        }
    }
}

impl SensorConfig {
    pub fn wavelengths(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut l = self.lambda_min_nm;
        let mut i = 0u32;
        while l <= self.lambda_max_nm + 1e-9 {
            out.push(l);
            i += 1;
            l = self.lambda_min_nm + f64::from(i) * self.step_nm;
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

/// Why an attempt stopped where it did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FailureReason {
    IkNoSolution,
    PlanStartInCollision,
    PlanGoalInCollision,
    PlanTimeout,
    GoalNotReached,
    GraspOutOfTolerance,
    MissingGroundTruth,
}

/// One pose attempt on one leaf. The flags are monotone:
/// `grasped => reached => plan_ok => ik_ok`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproachRecord {
    pub leaf_id: usize,
    /// 1-based pose candidate index (1..=5).
    pub pose_index: u8,
    pub ik_ok: bool,
    pub plan_ok: bool,
    pub reached: bool,
    pub grasped: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub spectrum: Option<SpectralSample>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub failure_reason: Option<FailureReason>,
    /// Executed joint trajectory, one waypoint per row (radians).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub path: Option<Vec<Vec<f64>>>,
}

impl ApproachRecord {
    /// An approach in the metric sense: a trajectory was planned and
    /// executed, whatever the grasp outcome.
    pub fn is_approach(&self) -> bool {
        self.plan_ok
    }
}

/// A calibrated transmittance sample over the sensor band grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralSample {
    pub wavelengths: Vec<f64>,
    pub values: Vec<f64>,
    pub white_ref: Vec<f64>,
    pub dark_ref: Vec<f64>,
}

/// Everything recorded for one batch, including the collision obstacles
/// the planner saw (base frame).
///
/// `wall_time` stays out of the serialized form so identical seeds
/// reproduce identical result files; timings belong in the log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRun {
    pub scene_id: u64,
    pub posesets: Vec<PoseSet>,
    #[serde(default)]
    pub obstacles: Vec<ObstacleBox>,
    pub approaches: Vec<ApproachRecord>,
    #[serde(skip)]
    pub wall_time: f64,
}

impl BatchRun {
    /// Distinct leaves with at least one executed approach.
    pub fn leaves_approached(&self) -> usize {
        let mut ids: Vec<usize> = self
            .approaches
            .iter()
            .filter(|r| r.is_approach())
            .map(|r| r.leaf_id)
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }

    /// Distinct leaves grasped (at most one success per leaf by
    /// construction).
    pub fn leaves_grasped(&self) -> usize {
        let mut ids: Vec<usize> = self
            .approaches
            .iter()
            .filter(|r| r.grasped)
            .map(|r| r.leaf_id)
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }
}

/// Inputs `run_batch` consumes: perception output plus ground truth and the
/// obstacle geometry, all in the camera frame.
#[derive(Debug, Clone)]
pub struct BatchInput {
    pub scene_id: u64,
    pub posesets: Vec<PoseSet>,
    pub gt: Vec<GtRecord>,
    pub obstacles: Vec<ObstacleBox>,
}

/// Per-run knobs shared by every batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunParams {
    /// Camera-to-base transform.
    pub extrinsic: Transform,
    pub planner: PlannerConfig,
    pub ik: IkConfig,
    pub grasp: GraspConfig,
    pub sensor: SensorConfig,
    /// Start configuration for each batch.
    pub home: JointVector,
    /// Master seed; per-attempt RNG streams are derived from it.
    pub seed: u64,
    /// Shortcutting attempts applied to each planned path.
    pub shortcut_attempts: usize,
    /// Keep executed trajectories in the records (for CSV export).
    pub record_paths: bool,
}

impl Default for RunParams {
    fn default() -> Self {
        Self {
            extrinsic: default_extrinsic(),
            planner: PlannerConfig::default(),
            ik: IkConfig::default(),
            grasp: GraspConfig::default(),
            sensor: SensorConfig::default(),
            home: JointVector::new(vec![0.0, 0.2, 0.5, 0.0, 0.8, 0.0]),
            seed: 0,
            shortcut_attempts: 100,
            record_paths: false,
        }
    }
}

/// Default camera mount: slightly behind and 0.4 m up the base column,
/// optical axis along base +x, image-right along base -y, image-down along
/// base -z. Leaves observed at the 0.5 m standoff then sit mid-workspace.
pub fn default_extrinsic() -> Transform {
    let t = Vec3::new(0.0, -1.0, 0.0); // camera x in base coords
    let b = Vec3::new(0.0, 0.0, -1.0); // camera y in base coords
    let n = Vec3::new(1.0, 0.0, 0.0); // camera z in base coords
    let rotation = crate::geometry::quat_from_basis(t, b, n).expect("orthonormal mount");
    Transform::new(rotation, Vec3::new(-0.12, 0.0, 0.40))
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Transforms pose sets from the camera frame into the base frame. The
/// camera distance is camera-relative by definition and is preserved: it
/// orders the targets.
pub fn to_base_frame(posesets: &[PoseSet], extrinsic: &Transform) -> Vec<PoseSet> {
    posesets
        .iter()
        .map(|ps| PoseSet {
            leaf_id: ps.leaf_id,
            camera_distance: ps.camera_distance,
            poses: ps.poses.iter().map(|p| extrinsic.apply_pose(p)).collect(),
        })
        .collect()
}

/// Verifies a grasp: end-effector within `tol_pos` of the true leaf center
/// and gripper normal axis within `tol_ang` of the leaf normal,
/// sign-insensitive.
pub fn grasp_check(ee_pose: &Pose, gt_leaf: &Pose, tol_pos: f64, tol_ang: f64) -> bool {
    if (ee_pose.position - gt_leaf.position).norm() > tol_pos {
        return false;
    }
    let cos = ee_pose.z_axis().dot(gt_leaf.z_axis()).abs().min(1.0);
    cos.acos() <= tol_ang
}

/// Smooth synthetic leaf transmittance: low in the blue, a green bump, a red
/// dip, and a near-infrared plateau. Explicitly a synthetic template, not a
/// measured spectrum.
pub fn leaf_transmittance_template(lambda_nm: f64) -> f64 {
    let gauss = |center: f64, width: f64| {
        let d = (lambda_nm - center) / width;
        (-d * d).exp()
    };
    let sigmoid = |center: f64, width: f64| 1.0 / (1.0 + (-(lambda_nm - center) / width).exp());
    (0.03 + 0.05 * gauss(550.0, 35.0) - 0.02 * gauss(670.0, 22.0) + 0.38 * sigmoid(715.0, 18.0))
        .clamp(0.0, 1.0)
}

/// White/dark referencing: `(raw - dark) / (white - dark)`, clamped to
/// [0, 1]. Fails when the reference span is non-positive at any band.
pub fn calibrate_transmittance(
    raw: &[f64],
    white: &[f64],
    dark: &[f64],
) -> Result<Vec<f64>, WorkflowError> {
    if raw.len() != white.len() || raw.len() != dark.len() {
        return Err(WorkflowError::DegenerateReference);
    }
    raw.iter()
        .zip(white.iter().zip(dark.iter()))
        .map(|(r, (w, d))| {
            if w <= d {
                Err(WorkflowError::DegenerateReference)
            } else {
                Ok(((r - d) / (w - d)).clamp(0.0, 1.0))
            }
        })
        .collect()
}

/// Simulates one spectral acquisition after a verified grasp: raw counts
/// follow `dark + (white - dark) * T(lambda)` plus sensor noise, then the
/// standard white/dark calibration recovers transmittance.
pub fn acquire_spectrum(
    _gt_leaf: &Pose,
    cfg: &SensorConfig,
    rng_seed: u64,
) -> Result<SpectralSample, WorkflowError> {
    if cfg.white_level <= cfg.dark_level {
        return Err(WorkflowError::DegenerateReference);
    }
    let wavelengths = cfg.wavelengths();
    let white = vec![cfg.white_level; wavelengths.len()];
    let dark = vec![cfg.dark_level; wavelengths.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let noise = if cfg.noise_sigma > 0.0 {
        Some(Normal::new(0.0, cfg.noise_sigma).expect("positive sigma"))
    } else {
        None
    };
    let raw: Vec<f64> = wavelengths
        .iter()
        .map(|l| {
            let t = leaf_transmittance_template(*l);
            let clean = cfg.dark_level + (cfg.white_level - cfg.dark_level) * t;
            clean + noise.map_or(0.0, |n| n.sample(&mut rng))
        })
        .collect();
    let values = calibrate_transmittance(&raw, &white, &dark)?;
    Ok(SpectralSample {
        wavelengths,
        values,
        white_ref: white,
        dark_ref: dark,
    })
}

/// Runs the manipulation workflow over one batch.
///
/// Targets are processed in the (already sorted) camera-distance order. For
/// each leaf the five candidates are tried in sequence; the loop breaks to
/// the next leaf on the first verified grasp and records every outcome
/// either way. Failures are data, not errors.
pub fn run_batch(input: &BatchInput, arm: &ArmModel, params: &RunParams) -> BatchRun {
    let started = Instant::now();
    let posesets = to_base_frame(&input.posesets, &params.extrinsic);
    let obstacles: Vec<ObstacleBox> = input
        .obstacles
        .iter()
        .map(|o| ObstacleBox {
            pose: params.extrinsic.apply_pose(&o.pose),
            half_extents: o.half_extents,
            leaf_id: o.leaf_id,
        })
        .collect();
    let gt_base: Vec<(usize, Pose)> = input
        .gt
        .iter()
        .map(|g| (g.leaf_id, params.extrinsic.apply_pose(&g.pose)))
        .collect();

    let mut approaches = Vec::new();
    let mut q_current = params.home.clone();

    for ps in &posesets {
        let scene = CollisionScene {
            obstacles: obstacles.clone(),
            robot: RobotGeometry::default_for(arm.dof()),
            allowed_target: Some(ps.leaf_id),
        };
        let gt_pose = gt_base.iter().find(|(id, _)| *id == ps.leaf_id).map(|(_, p)| *p);

        for (pose_idx, pose) in ps.poses.iter().enumerate() {
            let pose_index = (pose_idx + 1) as u8;
            let mut record = ApproachRecord {
                leaf_id: ps.leaf_id,
                pose_index,
                ik_ok: false,
                plan_ok: false,
                reached: false,
                grasped: false,
                spectrum: None,
                failure_reason: None,
                path: None,
            };
            let attempt_seed = |salt: u64| {
                derive_seed(
                    params.seed,
                    &[input.scene_id, ps.leaf_id as u64, u64::from(pose_index), salt],
                )
            };

            // Gripper goal: the leaf pose itself, optionally backed off
            // along the leaf normal.
            let mut goal = *pose;
            if params.grasp.approach_offset != 0.0 {
                goal.position = goal.position - goal.z_axis() * params.grasp.approach_offset;
            }

            // IK with a few reseeded retries: different wrist/elbow branches
            // reach the same pose, and only some of them clear the foliage.
            let mut q_goal = None;
            for retry in 0..4u64 {
                let ik_cfg = IkConfig {
                    rng_seed: attempt_seed(retry * 4),
                    ..params.ik
                };
                match solve_ik(arm, &goal, &q_current, &ik_cfg) {
                    Ok(q) => {
                        let clear = !collides(arm, &q, &scene).unwrap_or(true);
                        let first = q_goal.is_none();
                        if clear || first {
                            q_goal = Some(q);
                        }
                        if clear {
                            break;
                        }
                    }
                    Err(_) => break,
                }
            }
            let Some(q_goal) = q_goal else {
                record.failure_reason = Some(FailureReason::IkNoSolution);
                approaches.push(record);
                continue;
            };
            record.ik_ok = true;

            let planner_cfg = PlannerConfig {
                rng_seed: attempt_seed(1),
                ..params.planner
            };
            let path = match plan_rrtc(arm, &q_current, &q_goal, &scene, &planner_cfg) {
                Ok(p) => p,
                Err(err) => {
                    record.failure_reason = Some(match err {
                        PlanError::StartInCollision => FailureReason::PlanStartInCollision,
                        PlanError::GoalInCollision => FailureReason::PlanGoalInCollision,
                        _ => FailureReason::PlanTimeout,
                    });
                    approaches.push(record);
                    continue;
                }
            };
            let path = shortcut(&path, &scene, arm, params.shortcut_attempts, attempt_seed(2))
                .unwrap_or(path);
            record.plan_ok = true;
            if params.record_paths {
                record.path = Some(path.waypoints.iter().map(|w| w.angles.clone()).collect());
            }

            // Kinematic execution: the arm lands on the last waypoint, and
            // after the grasp check retreats along the reversed path (the
            // reverse is collision-free under the same target exemption),
            // leaving the tool clear of the foliage for the next plan.
            let q_reached = path.waypoints.last().expect("path has waypoints").clone();
            q_current = path.waypoints.first().expect("path has waypoints").clone();
            let ee = fk(arm, &q_reached).expect("valid configuration");
            record.reached = (ee.position - goal.position).norm() <= params.ik.tol_pos
                && ee.orientation.angle_to(goal.orientation) <= params.ik.tol_rot;
            if !record.reached {
                record.failure_reason = Some(FailureReason::GoalNotReached);
                approaches.push(record);
                continue;
            }

            let Some(gt) = gt_pose else {
                record.failure_reason = Some(FailureReason::MissingGroundTruth);
                approaches.push(record);
                continue;
            };
            record.grasped = grasp_check(&ee, &gt, params.grasp.tol_pos, params.grasp.tol_ang);
            if record.grasped {
                record.spectrum =
                    acquire_spectrum(&gt, &params.sensor, attempt_seed(3)).ok();
                approaches.push(record);
                break; // proceed to the next leaf
            }
            record.failure_reason = Some(FailureReason::GraspOutOfTolerance);
            approaches.push(record);
        }
    }

    BatchRun {
        scene_id: input.scene_id,
        posesets,
        obstacles,
        approaches,
        wall_time: started.elapsed().as_secs_f64(),
    }
}

// ---------------------------------------------------------------------------
// LPB metrics
// ---------------------------------------------------------------------------

/// One row of the LPB tables for a given `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LpbRow {
    pub k: usize,
    /// Batches with at least `k` distinct leaves approached.
    pub qualifying_batches: usize,
    /// Among those, batches with at least `k` successful approaches.
    pub satisfying_batches: usize,
    /// `qualifying / n_batches`, percent.
    pub availability_pct: f64,
    /// `satisfying / qualifying`, percent (0 when nothing qualifies).
    pub success_pct: f64,
}

/// Aggregated grasp metrics over a set of batch runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpbReport {
    pub n_batches: usize,
    pub total_approaches: usize,
    pub successful_approaches: usize,
    pub grasp_success_rate_pct: f64,
    pub rows: [LpbRow; 3],
}

/// Computes total approach counts, the overall grasp success rate, and the
/// 1/2/3-LPB availability and success percentages.
pub fn lpb_metrics(runs: &[BatchRun]) -> Result<LpbReport, WorkflowError> {
    if runs.is_empty() {
        return Err(WorkflowError::EmptyInput);
    }
    let total_approaches: usize = runs
        .iter()
        .map(|r| r.approaches.iter().filter(|a| a.is_approach()).count())
        .sum();
    let successful_approaches: usize = runs
        .iter()
        .map(|r| r.approaches.iter().filter(|a| a.grasped).count())
        .sum();
    let grasp_success_rate_pct = if total_approaches == 0 {
        0.0
    } else {
        100.0 * successful_approaches as f64 / total_approaches as f64
    };

    let rows = [1usize, 2, 3].map(|k| {
        let qualifying: Vec<&BatchRun> = runs
            .iter()
            .filter(|r| r.leaves_approached() >= k)
            .collect();
        let satisfying = qualifying
            .iter()
            .filter(|r| r.leaves_grasped() >= k)
            .count();
        LpbRow {
            k,
            qualifying_batches: qualifying.len(),
            satisfying_batches: satisfying,
            availability_pct: 100.0 * qualifying.len() as f64 / runs.len() as f64,
            success_pct: if qualifying.is_empty() {
                0.0
            } else {
                100.0 * satisfying as f64 / qualifying.len() as f64
            },
        }
    });

    Ok(LpbReport {
        n_batches: runs.len(),
        total_approaches,
        successful_approaches,
        grasp_success_rate_pct,
        rows,
    })
}
