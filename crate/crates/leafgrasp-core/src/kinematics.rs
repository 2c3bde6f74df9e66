//! DH serial-chain forward kinematics, geometric Jacobian, and damped
//! least-squares inverse kinematics.
//!
//! The arm model is a classic (distal) Denavit-Hartenberg chain: link `i`
//! contributes `RotZ(theta_i + offset_i) TransZ(d_i) TransX(a_i) RotX(alpha_i)`,
//! composed between a base pose and a tool offset. The IK solver iterates
//! `q += J^T (J J^T + lambda^2 I)^-1 e` with joint-limit clamping and seeded
//! random restarts.

use crate::geometry::{Pose, Transform, UnitQuat, Vec3};
use nalgebra::{DVector, Matrix6, OMatrix, Vector6, U6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("joint vector has {got} entries, arm has {expected} links")]
    LengthMismatch { expected: usize, got: usize },
    #[error("no IK solution within tolerance after all restarts")]
    NoSolution,
    #[error("invalid arm model: {0}")]
    InvalidModel(String),
}

/// One Denavit-Hartenberg link with joint limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DHLink {
    pub a: f64,
    pub alpha: f64,
    pub d: f64,
    pub theta_offset: f64,
    pub joint_min: f64,
    pub joint_max: f64,
}

impl DHLink {
    /// Link transform at joint angle `q`.
    pub fn transform(&self, q: f64) -> Transform {
        let theta = q + self.theta_offset;
        // RotZ(theta) TransZ(d) TransX(a) RotX(alpha), written in closed form.
        Transform::new(
            UnitQuat::rot_z(theta) * UnitQuat::rot_x(self.alpha),
            Vec3::new(self.a * theta.cos(), self.a * theta.sin(), self.d),
        )
    }
}

/// A serial arm: DH links between a base pose and a tool offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmModel {
    pub links: Vec<DHLink>,
    pub base_pose: Transform,
    pub tool_offset: Transform,
}

impl ArmModel {
    /// Generic 6-DOF chain in the 900 mm reach class (shoulder riser, upper
    /// arm, forearm, spherical-ish wrist, short flange). Dimensions are
    /// plausible defaults, not a calibrated model of any specific robot.
    ///
    /// The tool frame is the flange frame turned half a turn about x: its
    /// z axis points back along the approach direction, so aligning the
    /// tool with a leaf frame (normal toward the camera) drives the gripper
    /// in from the camera side.
    pub fn default_6dof() -> Self {
        use std::f64::consts::{FRAC_PI_2, PI};
        let lim = (-PI, PI);
        let link = |a: f64, alpha: f64, d: f64, theta_offset: f64| DHLink {
            a,
            alpha,
            d,
            theta_offset,
            joint_min: lim.0,
            joint_max: lim.1,
        };
        Self {
            links: vec![
                link(0.0, -FRAC_PI_2, 0.145, 0.0),
                link(0.40, 0.0, 0.0, -FRAC_PI_2),
                link(0.0, -FRAC_PI_2, 0.0, -FRAC_PI_2),
                link(0.0, FRAC_PI_2, 0.305, 0.0),
                link(0.0, -FRAC_PI_2, 0.0, 0.0),
                link(0.0, 0.0, 0.05, 0.0),
            ],
            base_pose: Transform::identity(),
            tool_offset: Transform::from_rotation(UnitQuat::rot_x(PI)),
        }
    }

    pub fn dof(&self) -> usize {
        self.links.len()
    }

    /// Conservative reach bound: the sum of all link offsets.
    pub fn reach(&self) -> f64 {
        self.links.iter().map(|l| l.a.abs() + l.d.abs()).sum()
    }

    pub fn validate(&self) -> Result<(), KinematicsError> {
        if self.links.is_empty() {
            return Err(KinematicsError::InvalidModel("arm has no links".into()));
        }
        for (i, l) in self.links.iter().enumerate() {
            if l.joint_min.partial_cmp(&l.joint_max) != Some(std::cmp::Ordering::Less) {
                return Err(KinematicsError::InvalidModel(format!(
                    "link {i}: joint_min {} !< joint_max {}",
                    l.joint_min, l.joint_max
                )));
            }
        }
        Ok(())
    }

    fn check_len(&self, q: &JointVector) -> Result<(), KinematicsError> {
        if q.angles.len() != self.links.len() {
            return Err(KinematicsError::LengthMismatch {
                expected: self.links.len(),
                got: q.angles.len(),
            });
        }
        Ok(())
    }

    /// Confines an angle to a joint's limits. Joints whose limits span a
    /// full revolution wrap (the wrapped angle is the same physical
    /// configuration); shorter ranges clamp.
    fn confine(link: &DHLink, angle: f64) -> f64 {
        if (link.joint_min..=link.joint_max).contains(&angle) {
            return angle;
        }
        let span = link.joint_max - link.joint_min;
        if span >= 2.0 * std::f64::consts::PI - 1e-9 {
            let mut a = (angle - link.joint_min).rem_euclid(2.0 * std::f64::consts::PI)
                + link.joint_min;
            if a > link.joint_max {
                a -= 2.0 * std::f64::consts::PI;
            }
            a
        } else {
            angle.clamp(link.joint_min, link.joint_max)
        }
    }

    /// Confines every joint into its limits (wrapping full-circle joints).
    pub fn clamp_to_limits(&self, q: &JointVector) -> JointVector {
        JointVector::new(
            q.angles
                .iter()
                .zip(self.links.iter())
                .map(|(a, l)| Self::confine(l, *a))
                .collect(),
        )
    }

    pub fn within_limits(&self, q: &JointVector) -> bool {
        q.angles
            .iter()
            .zip(self.links.iter())
            .all(|(a, l)| (l.joint_min..=l.joint_max).contains(a))
    }

    /// Uniform random configuration within the joint limits.
    pub fn random_config(&self, rng: &mut ChaCha8Rng) -> JointVector {
        JointVector::new(
            self.links
                .iter()
                .map(|l| rng.random_range(l.joint_min..l.joint_max))
                .collect(),
        )
    }
}

/// One joint-space configuration (radians, one entry per link).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointVector {
    pub angles: Vec<f64>,
}

impl JointVector {
    pub fn new(angles: Vec<f64>) -> Self {
        Self { angles }
    }

    pub fn zeros(n: usize) -> Self {
        Self::new(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    /// Euclidean distance in joint space (unit weights).
    pub fn distance(&self, other: &Self) -> f64 {
        self.angles
            .iter()
            .zip(other.angles.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Cumulative frames along the chain: `[base, base*A1, ..., base*A1..An, *tool]`.
/// The last entry is the tool (end-effector) frame, so the vector holds
/// `n + 2` transforms.
pub fn link_frames(arm: &ArmModel, q: &JointVector) -> Result<Vec<Transform>, KinematicsError> {
    arm.check_len(q)?;
    let mut frames = Vec::with_capacity(arm.links.len() + 2);
    let mut current = arm.base_pose;
    frames.push(current);
    for (link, angle) in arm.links.iter().zip(q.angles.iter()) {
        current = current.compose(&link.transform(*angle));
        frames.push(current);
    }
    frames.push(current.compose(&arm.tool_offset));
    Ok(frames)
}

/// Forward kinematics: the tool pose for a configuration.
pub fn fk(arm: &ArmModel, q: &JointVector) -> Result<Pose, KinematicsError> {
    let frames = link_frames(arm, q)?;
    let tool = frames.last().expect("chain has frames");
    Ok(Pose::new(tool.translation, tool.rotation))
}

/// Geometric Jacobian (6 x n): rows 0..3 linear (m/rad), rows 3..6 angular
/// (rad/rad), both expressed in the base frame.
pub fn jacobian(arm: &ArmModel, q: &JointVector) -> Result<OMatrix<f64, U6, nalgebra::Dyn>, KinematicsError> {
    let frames = link_frames(arm, q)?;
    let n = arm.links.len();
    let tool_pos = frames[n + 1].translation;
    let mut jac = OMatrix::<f64, U6, nalgebra::Dyn>::zeros(n);
    for i in 0..n {
        // Joint i rotates about the z axis of frame i-1 (frames[i]).
        let axis = frames[i].rotation.rotate(Vec3::unit_z());
        let origin = frames[i].translation;
        let linear = axis.cross(tool_pos - origin);
        jac[(0, i)] = linear.x;
        jac[(1, i)] = linear.y;
        jac[(2, i)] = linear.z;
        jac[(3, i)] = axis.x;
        jac[(4, i)] = axis.y;
        jac[(5, i)] = axis.z;
    }
    Ok(jac)
}

/// Damped least-squares IK parameters. All knobs are plain config; the
/// defaults match the pipeline's tolerances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IkConfig {
    pub tol_pos: f64,
    pub tol_rot: f64,
    pub max_iter: usize,
    pub lambda: f64,
    pub max_restarts: usize,
    pub max_step: f64,
    pub rng_seed: u64,
}

impl Default for IkConfig {
    fn default() -> Self {
        Self {
            tol_pos: 1e-4,
            tol_rot: 1e-3,
            max_iter: 200,
            lambda: 0.05,
            max_restarts: 10,
            max_step: 0.5,
            rng_seed: 0,
        }
    }
}

/// Pose error as a 6-vector: translation difference on top, rotation vector
/// of the relative rotation below (both in the base frame).
fn pose_error(current: &Pose, target: &Pose) -> (Vector6<f64>, f64, f64) {
    let dp = target.position - current.position;
    let rel = target.orientation * current.orientation.inverse();
    let rv = rel.rotation_vector();
    let e = Vector6::new(dp.x, dp.y, dp.z, rv.x, rv.y, rv.z);
    (e, dp.norm(), current.orientation.angle_to(target.orientation))
}

/// Solves IK with damped least squares from `seed`, restarting from random
/// in-limit configurations when a descent stalls.
///
/// On success the returned configuration satisfies the position and rotation
/// tolerances and every joint limit. Deterministic for a fixed
/// `(arm, target, seed, cfg.rng_seed)`.
pub fn solve_ik(
    arm: &ArmModel,
    target: &Pose,
    seed: &JointVector,
    cfg: &IkConfig,
) -> Result<JointVector, KinematicsError> {
    arm.check_len(seed)?;
    let n = arm.links.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let lambda2 = cfg.lambda * cfg.lambda;

    let mut q = arm.clamp_to_limits(seed);
    for attempt in 0..=cfg.max_restarts {
        if attempt > 0 {
            q = arm.random_config(&mut rng);
        }
        for _ in 0..cfg.max_iter {
            let pose = fk(arm, &q)?;
            let (e, pos_err, rot_err) = pose_error(&pose, target);
            if pos_err <= cfg.tol_pos && rot_err <= cfg.tol_rot {
                return Ok(q);
            }
            let jac = jacobian(arm, &q)?;
            let jjt: Matrix6<f64> = &jac * jac.transpose();
            let damped = jjt + Matrix6::identity() * lambda2;
            let Some(y) = damped.lu().solve(&e) else {
                break;
            };
            let mut dq: DVector<f64> = jac.transpose() * y;
            let max_abs = dq.amax();
            if max_abs > cfg.max_step {
                dq *= cfg.max_step / max_abs;
            }
            if max_abs < 1e-14 {
                break; // stalled
            }
            for i in 0..n {
                q.angles[i] = ArmModel::confine(&arm.links[i], q.angles[i] + dq[i]);
            }
        }
    }
    Err(KinematicsError::NoSolution)
}
