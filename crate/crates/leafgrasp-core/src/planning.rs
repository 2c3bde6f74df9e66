//! Collision scene of simplified leaf obstacles and joint-space RRT-Connect.
//!
//! Leaves enter the planning scene as thin oriented boxes; the robot is a
//! chain of capsules spanning consecutive joint origins. RRT-Connect grows
//! one tree from the start and one from the goal, alternating extend and
//! connect roles, and returns a densified path whose every interpolated
//! state was collision-checked.

use crate::geometry::{Pose, Vec3};
use crate::kinematics::{link_frames, ArmModel, JointVector, KinematicsError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Leaves become boxes this thick (half-extent along the normal).
pub const LEAF_OBSTACLE_HALF_THICKNESS: f64 = 0.002;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error("start configuration is in collision")]
    StartInCollision,
    #[error("goal configuration is in collision")]
    GoalInCollision,
    #[error("no path found within {0} iterations")]
    Timeout(usize),
}

/// An oriented box obstacle; `leaf_id` ties it to the leaf it approximates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObstacleBox {
    pub pose: Pose,
    #[serde(with = "crate::geometry::vec3_array")]
    pub half_extents: Vec3,
    pub leaf_id: Option<usize>,
}

impl ObstacleBox {
    /// The thin box standing in for a leaf: length and width in-plane,
    /// a couple of millimeters along the normal.
    pub fn for_leaf(pose: Pose, length: f64, width: f64, leaf_id: usize) -> Self {
        Self {
            pose,
            half_extents: Vec3::new(
                length / 2.0,
                width / 2.0,
                LEAF_OBSTACLE_HALF_THICKNESS,
            ),
            leaf_id: Some(leaf_id),
        }
    }
}

/// Capsule radii wrapped around the arm: entry `i` covers the segment from
/// joint origin `i` to origin `i + 1`, the last entry covers flange-to-tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotGeometry {
    pub radii: Vec<f64>,
}

impl RobotGeometry {
    /// Radii for an arm with `n` links: thicker near the base, slim at the
    /// wrist where the two-finger gripper and optics sit.
    pub fn default_for(n: usize) -> Self {
        let radii = (0..=n)
            .map(|i| {
                let t = i as f64 / n.max(1) as f64;
                0.042 - 0.030 * t
            })
            .collect();
        Self { radii }
    }
}

/// Obstacles plus robot shape; `allowed_target` names the one leaf the
/// gripper is allowed to touch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionScene {
    pub obstacles: Vec<ObstacleBox>,
    pub robot: RobotGeometry,
    pub allowed_target: Option<usize>,
}

impl CollisionScene {
    pub fn empty(arm: &ArmModel) -> Self {
        Self {
            obstacles: Vec::new(),
            robot: RobotGeometry::default_for(arm.dof()),
            allowed_target: None,
        }
    }
}

// ---------------------------------------------------------------------------
// Primitive distances
// ---------------------------------------------------------------------------

/// Closest distance between two segments (Ericson, Real-Time Collision
/// Detection 5.1.9).
pub fn segment_segment_distance(p1: Vec3, q1: Vec3, p2: Vec3, q2: Vec3) -> f64 {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(r);
    let (s, t);
    if a <= 1e-18 && e <= 1e-18 {
        return r.norm();
    }
    if a <= 1e-18 {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(r);
        if e <= 1e-18 {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(d2);
            let denom = a * e - b * b;
            let mut s_ = if denom > 1e-18 {
                ((b * f - c * e) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let mut t_ = (b * s_ + f) / e;
            if t_ < 0.0 {
                t_ = 0.0;
                s_ = (-c / a).clamp(0.0, 1.0);
            } else if t_ > 1.0 {
                t_ = 1.0;
                s_ = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s_;
            t = t_;
        }
    }
    ((p1 + d1 * s) - (p2 + d2 * t)).norm()
}

/// Squared distance from a point to an axis-aligned box centered at the
/// origin with half extents `h`.
fn point_aabb_distance_squared(p: Vec3, h: Vec3) -> f64 {
    let dx = (p.x.abs() - h.x).max(0.0);
    let dy = (p.y.abs() - h.y).max(0.0);
    let dz = (p.z.abs() - h.z).max(0.0);
    dx * dx + dy * dy + dz * dz
}

/// Closest distance between a segment and an oriented box.
///
/// The segment is mapped into the box frame; the squared distance along the
/// segment parameter is convex, so a ternary search converges globally.
pub fn segment_box_distance(a: Vec3, b: Vec3, obb: &ObstacleBox) -> f64 {
    let inv_rot = obb.pose.orientation.inverse();
    let la = inv_rot.rotate(a - obb.pose.position);
    let lb = inv_rot.rotate(b - obb.pose.position);
    let h = obb.half_extents;

    let f = |t: f64| point_aabb_distance_squared(la + (lb - la) * t, h);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..64 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        let f1 = f(m1);
        let f2 = f(m2);
        if f1 == 0.0 || f2 == 0.0 {
            return 0.0;
        }
        if f1 < f2 {
            hi = m2;
        } else if f2 < f1 {
            lo = m1;
        } else {
            lo = m1;
            hi = m2;
        }
    }
    f(0.5 * (lo + hi)).min(f(lo)).min(f(hi)).sqrt()
}

// ---------------------------------------------------------------------------
// Arm collision checking
// ---------------------------------------------------------------------------

struct Capsule {
    index: usize,
    a: Vec3,
    b: Vec3,
    radius: f64,
}

fn arm_capsules(
    arm: &ArmModel,
    q: &JointVector,
    robot: &RobotGeometry,
) -> Result<Vec<Capsule>, KinematicsError> {
    let frames = link_frames(arm, q)?;
    let mut capsules = Vec::with_capacity(frames.len() - 1);
    for i in 0..frames.len() - 1 {
        let a = frames[i].translation;
        let b = frames[i + 1].translation;
        if (b - a).norm() < 1e-9 {
            continue; // zero-length stretch, covered by its neighbors
        }
        let radius = robot
            .radii
            .get(i)
            .copied()
            .unwrap_or_else(|| *robot.radii.last().unwrap_or(&0.03));
        capsules.push(Capsule {
            index: i,
            a,
            b,
            radius,
        });
    }
    Ok(capsules)
}

/// True when any link capsule intersects an obstacle box (except the
/// exempted target leaf) or any kinematically separated link capsule.
pub fn collides(
    arm: &ArmModel,
    q: &JointVector,
    scene: &CollisionScene,
) -> Result<bool, KinematicsError> {
    let capsules = arm_capsules(arm, q, &scene.robot)?;
    for cap in &capsules {
        for obs in &scene.obstacles {
            if obs.leaf_id.is_some() && obs.leaf_id == scene.allowed_target {
                continue;
            }
            if segment_box_distance(cap.a, cap.b, obs) <= cap.radius {
                return Ok(true);
            }
        }
    }
    for i in 0..capsules.len() {
        for j in (i + 1)..capsules.len() {
            let (ci, cj) = (&capsules[i], &capsules[j]);
            if cj.index - ci.index <= 1 {
                continue; // adjacent in the chain
            }
            // Capsules joined through zero-length wrist stretches share an
            // endpoint; they are kinematically adjacent, not colliding.
            let endpoint_touch = [(ci.a, cj.a), (ci.a, cj.b), (ci.b, cj.a), (ci.b, cj.b)]
                .iter()
                .any(|(x, y)| (*x - *y).norm() < 1e-9);
            if endpoint_touch {
                continue;
            }
            if segment_segment_distance(ci.a, ci.b, cj.a, cj.b) <= ci.radius + cj.radius {
                return Ok(true);
            }
        }
    }
    Ok(false)
}

// ---------------------------------------------------------------------------
// RRT-Connect
// ---------------------------------------------------------------------------

/// Planner knobs; `step_size` is the joint-space extension step and the
/// validation resolution is `step_size / 4`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub step_size: f64,
    pub goal_bias: f64,
    pub max_iterations: usize,
    pub rng_seed: u64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            step_size: 0.1,
            goal_bias: 0.05,
            max_iterations: 5000,
            rng_seed: 0,
        }
    }
}

/// A validated joint-space path. After densification consecutive waypoints
/// differ by at most `resolution` on every joint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub waypoints: Vec<JointVector>,
    pub resolution: f64,
}

impl Path {
    /// Total joint-space arc length.
    pub fn arc_length(&self) -> f64 {
        self.waypoints
            .windows(2)
            .map(|w| w[0].distance(&w[1]))
            .sum()
    }
}

/// Interior states of the segment `a -> b` at steps no longer than
/// `resolution` (L2), endpoint included, start excluded. Shared by edge
/// validation and path densification so both see bit-identical states.
fn interpolate_states(a: &JointVector, b: &JointVector, resolution: f64) -> Vec<JointVector> {
    let dist = a.distance(b);
    let steps = ((dist / resolution).ceil() as usize).max(1);
    let mut out = Vec::with_capacity(steps);
    for s in 1..=steps {
        if s == steps {
            out.push(b.clone());
        } else {
            let t = s as f64 / steps as f64;
            out.push(JointVector::new(
                a.angles
                    .iter()
                    .zip(b.angles.iter())
                    .map(|(x, y)| x + (y - x) * t)
                    .collect(),
            ));
        }
    }
    out
}

fn motion_valid(
    arm: &ArmModel,
    scene: &CollisionScene,
    from: &JointVector,
    to: &JointVector,
    resolution: f64,
) -> Result<bool, KinematicsError> {
    for state in interpolate_states(from, to, resolution) {
        if collides(arm, &state, scene)? {
            return Ok(false);
        }
    }
    Ok(true)
}

struct Tree {
    nodes: Vec<JointVector>,
    parents: Vec<usize>,
}

impl Tree {
    fn new(root: JointVector) -> Self {
        Self {
            nodes: vec![root],
            parents: vec![0],
        }
    }

    fn nearest(&self, q: &JointVector) -> usize {
        let mut best = 0;
        let mut best_d = self.nodes[0].distance(q);
        for (i, n) in self.nodes.iter().enumerate().skip(1) {
            let d = n.distance(q);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    fn branch(&self, mut idx: usize) -> Vec<JointVector> {
        let mut out = vec![self.nodes[idx].clone()];
        while self.parents[idx] != idx {
            idx = self.parents[idx];
            out.push(self.nodes[idx].clone());
        }
        out.reverse();
        out
    }
}

enum Extend {
    Trapped,
    Advanced(usize),
    Reached(usize),
}

fn extend(
    tree: &mut Tree,
    target: &JointVector,
    arm: &ArmModel,
    scene: &CollisionScene,
    step: f64,
    resolution: f64,
) -> Result<Extend, KinematicsError> {
    let near_idx = tree.nearest(target);
    let near = tree.nodes[near_idx].clone();
    let dist = near.distance(target);
    if dist < 1e-12 {
        return Ok(Extend::Reached(near_idx));
    }
    let reached = dist <= step;
    let q_new = if reached {
        target.clone()
    } else {
        let t = step / dist;
        JointVector::new(
            near.angles
                .iter()
                .zip(target.angles.iter())
                .map(|(a, b)| a + (b - a) * t)
                .collect(),
        )
    };
    if !motion_valid(arm, scene, &near, &q_new, resolution)? {
        return Ok(Extend::Trapped);
    }
    tree.nodes.push(q_new);
    tree.parents.push(near_idx);
    let new_idx = tree.nodes.len() - 1;
    Ok(if reached {
        Extend::Reached(new_idx)
    } else {
        Extend::Advanced(new_idx)
    })
}

fn connect(
    tree: &mut Tree,
    target: &JointVector,
    arm: &ArmModel,
    scene: &CollisionScene,
    step: f64,
    resolution: f64,
) -> Result<Extend, KinematicsError> {
    loop {
        match extend(tree, target, arm, scene, step, resolution)? {
            Extend::Advanced(_) => continue,
            other => return Ok(other),
        }
    }
}

/// Bidirectional RRT-Connect in joint space.
///
/// The two trees alternate extend/connect roles each iteration; the
/// algorithm is serial but semantically identical to a concurrent build.
/// Deterministic for a fixed `cfg.rng_seed`.
pub fn plan_rrtc(
    arm: &ArmModel,
    q_start: &JointVector,
    q_goal: &JointVector,
    scene: &CollisionScene,
    cfg: &PlannerConfig,
) -> Result<Path, PlanError> {
    let resolution = cfg.step_size / 4.0;
    if collides(arm, q_start, scene)? {
        return Err(PlanError::StartInCollision);
    }
    if collides(arm, q_goal, scene)? {
        return Err(PlanError::GoalInCollision);
    }
    if q_start.distance(q_goal) < 1e-12 {
        return Ok(Path {
            waypoints: vec![q_start.clone()],
            resolution,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut start_tree = Tree::new(q_start.clone());
    let mut goal_tree = Tree::new(q_goal.clone());
    // `swapped` tracks whether tree_a currently denotes the goal tree.
    let mut swapped = false;

    for _ in 0..cfg.max_iterations {
        let (tree_a, tree_b) = if swapped {
            (&mut goal_tree, &mut start_tree)
        } else {
            (&mut start_tree, &mut goal_tree)
        };
        let q_rand = if rng.random::<f64>() < cfg.goal_bias {
            tree_b.nodes[0].clone()
        } else {
            arm.random_config(&mut rng)
        };
        let status = extend(tree_a, &q_rand, arm, scene, cfg.step_size, resolution)?;
        if let Extend::Advanced(new_idx) | Extend::Reached(new_idx) = status {
            let q_new = tree_a.nodes[new_idx].clone();
            if let Extend::Reached(meet_idx) =
                connect(tree_b, &q_new, arm, scene, cfg.step_size, resolution)?
            {
                let (start_branch, goal_branch) = if swapped {
                    (tree_b.branch(meet_idx), tree_a.branch(new_idx))
                } else {
                    (tree_a.branch(new_idx), tree_b.branch(meet_idx))
                };
                let mut waypoints = start_branch;
                // The meeting configuration appears at the tip of both
                // branches; keep one copy.
                waypoints.extend(goal_branch.into_iter().rev().skip(1));
                return Ok(densify(waypoints, resolution));
            }
        }
        swapped = !swapped;
    }
    Err(PlanError::Timeout(cfg.max_iterations))
}

fn densify(waypoints: Vec<JointVector>, resolution: f64) -> Path {
    let mut dense = Vec::with_capacity(waypoints.len());
    dense.push(waypoints[0].clone());
    for pair in waypoints.windows(2) {
        dense.extend(interpolate_states(&pair[0], &pair[1], resolution));
    }
    Path {
        waypoints: dense,
        resolution,
    }
}

/// Random pairwise shortcutting: straight joint-space segments replace the
/// stretch between two random waypoints whenever the segment validates.
/// Arc length never increases; endpoints are untouched.
pub fn shortcut(
    path: &Path,
    scene: &CollisionScene,
    arm: &ArmModel,
    attempts: usize,
    rng_seed: u64,
) -> Result<Path, KinematicsError> {
    if path.waypoints.len() < 3 || attempts == 0 {
        return Ok(path.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut waypoints = path.waypoints.clone();
    for _ in 0..attempts {
        if waypoints.len() < 3 {
            break;
        }
        let i = rng.random_range(0..waypoints.len() - 2);
        let j = rng.random_range(i + 2..waypoints.len());
        let old_len: f64 = waypoints[i..=j]
            .windows(2)
            .map(|w| w[0].distance(&w[1]))
            .sum();
        let new_len = waypoints[i].distance(&waypoints[j]);
        if new_len >= old_len - 1e-12 {
            continue;
        }
        if motion_valid(arm, scene, &waypoints[i], &waypoints[j], path.resolution)? {
            let mut replacement = vec![waypoints[i].clone()];
            replacement.extend(interpolate_states(
                &waypoints[i],
                &waypoints[j],
                path.resolution,
            ));
            waypoints.splice(i..=j, replacement);
        }
    }
    Ok(Path {
        waypoints,
        resolution: path.resolution,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::UnitQuat;
    use crate::kinematics::fk;

    fn arm() -> ArmModel {
        ArmModel::default_6dof()
    }

    fn home() -> JointVector {
        JointVector::new(vec![0.0, 0.2, 0.5, 0.0, 0.8, 0.0])
    }

    /// Rejection-samples a configuration that is collision-free in `scene`.
    fn free_config(
        arm: &ArmModel,
        scene: &CollisionScene,
        rng: &mut ChaCha8Rng,
    ) -> JointVector {
        loop {
            let q = arm.random_config(rng);
            if !collides(arm, &q, scene).unwrap() {
                return q;
            }
        }
    }

    #[test]
    fn empty_scene_home_pose_is_collision_free() {
        let arm = arm();
        let scene = CollisionScene::empty(&arm);
        assert!(!collides(&arm, &home(), &scene).unwrap());
        assert!(!collides(&arm, &JointVector::zeros(6), &scene).unwrap());
    }

    #[test]
    fn box_on_end_effector_collides() {
        let arm = arm();
        let q = home();
        let ee = fk(&arm, &q).unwrap();
        let mut scene = CollisionScene::empty(&arm);
        scene.obstacles.push(ObstacleBox {
            pose: Pose::new(ee.position, UnitQuat::identity()),
            half_extents: Vec3::new(0.1, 0.1, 0.1),
            leaf_id: None,
        });
        assert!(collides(&arm, &q, &scene).unwrap());
    }

    #[test]
    fn allowed_target_is_exempt() {
        let arm = arm();
        let q = home();
        let ee = fk(&arm, &q).unwrap();
        let mut scene = CollisionScene::empty(&arm);
        scene.obstacles.push(ObstacleBox::for_leaf(
            Pose::new(ee.position, UnitQuat::identity()),
            0.08,
            0.05,
            3,
        ));
        assert!(collides(&arm, &q, &scene).unwrap());
        scene.allowed_target = Some(3);
        assert!(!collides(&arm, &q, &scene).unwrap());
    }

    #[test]
    fn separated_capsule_and_box_do_not_collide() {
        // Separating-axis oracle on an axis-aligned pair: the segment runs
        // parallel to x at a y offset larger than half-extent + radius.
        let obb = ObstacleBox {
            pose: Pose::identity(),
            half_extents: Vec3::new(0.2, 0.1, 0.05),
            leaf_id: None,
        };
        let radius = 0.04;
        let clear_y = 0.1 + radius + 0.01;
        let d = segment_box_distance(
            Vec3::new(-0.5, clear_y, 0.0),
            Vec3::new(0.5, clear_y, 0.0),
            &obb,
        );
        assert!(d > radius, "distance {d} should exceed radius {radius}");
        // Move inside the separating band and the test flips.
        let near_y = 0.1 + radius - 0.01;
        let d = segment_box_distance(
            Vec3::new(-0.5, near_y, 0.0),
            Vec3::new(0.5, near_y, 0.0),
            &obb,
        );
        assert!(d <= radius);
        // Exact separation checks on all three axes.
        for axis in 0..3 {
            let h = [0.2, 0.1, 0.05][axis];
            let mut offset = Vec3::ZERO;
            match axis {
                0 => offset.x = h + radius + 0.02,
                1 => offset.y = h + radius + 0.02,
                _ => offset.z = h + radius + 0.02,
            }
            let d = segment_box_distance(offset, offset + Vec3::new(0.0, 0.0, 1e-6), &obb);
            assert!(d > radius);
        }
    }

    #[test]
    fn segment_box_distance_handles_rotation() {
        // A box rotated 45 degrees about z; distance measured analytically
        // along the rotated face normal.
        let obb = ObstacleBox {
            pose: Pose::new(Vec3::ZERO, UnitQuat::rot_z(std::f64::consts::FRAC_PI_4)),
            half_extents: Vec3::new(0.1, 0.1, 0.1),
            leaf_id: None,
        };
        // A point along the rotated x axis at 0.25: distance 0.15.
        let dir = UnitQuat::rot_z(std::f64::consts::FRAC_PI_4).rotate(Vec3::unit_x());
        let p = dir * 0.25;
        let d = segment_box_distance(p, p + Vec3::new(0.0, 0.0, 1e-9), &obb);
        assert!((d - 0.15).abs() < 1e-6, "distance {d}");
    }

    #[test]
    fn collision_is_invariant_under_joint_rigid_motion() {
        use crate::geometry::Transform;
        let mut arm = arm();
        let mut scene = CollisionScene::empty(&arm);
        scene.obstacles.push(ObstacleBox {
            pose: Pose::new(Vec3::new(0.35, 0.05, 0.4), UnitQuat::rot_y(0.7)),
            half_extents: Vec3::new(0.05, 0.03, 0.002),
            leaf_id: None,
        });
        let motion = Transform::new(
            UnitQuat::from_axis_angle(Vec3::new(0.6, 0.0, 0.8), 1.2),
            Vec3::new(0.2, -0.4, 0.15),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..30 {
            let q = arm.random_config(&mut rng);
            let before = collides(&arm, &q, &scene).unwrap();
            // Move the world: base and obstacles together.
            let moved_scene = CollisionScene {
                obstacles: scene
                    .obstacles
                    .iter()
                    .map(|o| ObstacleBox {
                        pose: motion.apply_pose(&o.pose),
                        half_extents: o.half_extents,
                        leaf_id: o.leaf_id,
                    })
                    .collect(),
                robot: scene.robot.clone(),
                allowed_target: None,
            };
            let original_base = arm.base_pose;
            arm.base_pose = motion.compose(&original_base);
            let after = collides(&arm, &q, &moved_scene).unwrap();
            arm.base_pose = original_base;
            assert_eq!(before, after, "rigid motion changed the verdict");
        }
    }

    #[test]
    fn primitive_distances_are_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let mut p = || {
                Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            };
            let (a, b, c, d) = (p(), p(), p(), p());
            let fwd = segment_segment_distance(a, b, c, d);
            let rev = segment_segment_distance(c, d, a, b);
            assert!((fwd - rev).abs() < 1e-12);
            // Endpoint order within a segment is immaterial too.
            let flip = segment_segment_distance(b, a, c, d);
            assert!((fwd - flip).abs() < 1e-9);
        }
    }

    #[test]
    fn segment_segment_distance_cases() {
        // Parallel unit-separated segments.
        let d = segment_segment_distance(
            Vec3::ZERO,
            Vec3::unit_x(),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(1.0, 1.0, 0.0),
        );
        assert!((d - 1.0).abs() < 1e-12);
        // Crossing segments touch.
        let d = segment_segment_distance(
            Vec3::new(-1.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, -1.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
        );
        assert!(d < 1e-12);
        // Degenerate (point) segments.
        let d = segment_segment_distance(Vec3::ZERO, Vec3::ZERO, Vec3::unit_z(), Vec3::unit_z());
        assert!((d - 1.0).abs() < 1e-12);
    }

    #[test]
    fn trivial_plan_single_waypoint() {
        let arm = arm();
        let scene = CollisionScene::empty(&arm);
        let q = home();
        let path = plan_rrtc(&arm, &q, &q, &scene, &PlannerConfig::default()).unwrap();
        assert_eq!(path.waypoints.len(), 1);
        assert_eq!(path.waypoints[0], q);
    }

    #[test]
    fn goal_in_collision_is_reported() {
        let arm = arm();
        let q = home();
        let goal = JointVector::new(vec![1.2, -0.4, 0.9, 0.0, 0.6, 0.0]);
        let ee = fk(&arm, &goal).unwrap();
        let mut scene = CollisionScene::empty(&arm);
        scene.obstacles.push(ObstacleBox {
            pose: Pose::new(ee.position, UnitQuat::identity()),
            half_extents: Vec3::new(0.05, 0.05, 0.05),
            leaf_id: None,
        });
        assert!(matches!(
            plan_rrtc(&arm, &q, &goal, &scene, &PlannerConfig::default()),
            Err(PlanError::GoalInCollision)
        ));
        assert!(matches!(
            plan_rrtc(&arm, &goal, &q, &scene, &PlannerConfig::default()),
            Err(PlanError::StartInCollision)
        ));
    }

    #[test]
    fn empty_scene_queries_succeed() {
        let arm = arm();
        let scene = CollisionScene::empty(&arm);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut successes = 0;
        for seed in 0..40u64 {
            let a = free_config(&arm, &scene, &mut rng);
            let b = free_config(&arm, &scene, &mut rng);
            let cfg = PlannerConfig {
                rng_seed: seed,
                ..PlannerConfig::default()
            };
            if let Ok(path) = plan_rrtc(&arm, &a, &b, &scene, &cfg) {
                assert_eq!(path.waypoints.first().unwrap(), &a);
                assert_eq!(path.waypoints.last().unwrap(), &b);
                for pair in path.waypoints.windows(2) {
                    for (x, y) in pair[0].angles.iter().zip(pair[1].angles.iter()) {
                        assert!((x - y).abs() <= path.resolution + 1e-12);
                    }
                }
                successes += 1;
            }
        }
        assert!(successes >= 40, "empty-scene success {successes}/40");
    }

    #[test]
    fn planned_paths_validate_against_obstacles() {
        let arm = arm();
        let mut scene = CollisionScene::empty(&arm);
        scene.obstacles.push(ObstacleBox {
            pose: Pose::new(Vec3::new(0.35, 0.0, 0.35), UnitQuat::rot_y(0.4)),
            half_extents: Vec3::new(0.04, 0.1, 0.002),
            leaf_id: None,
        });
        scene.obstacles.push(ObstacleBox {
            pose: Pose::new(Vec3::new(0.3, 0.2, 0.5), UnitQuat::rot_x(0.9)),
            half_extents: Vec3::new(0.05, 0.03, 0.002),
            leaf_id: None,
        });
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut planned = 0;
        let mut attempts = 0;
        while planned < 10 && attempts < 200 {
            attempts += 1;
            let a = free_config(&arm, &scene, &mut rng);
            let b = free_config(&arm, &scene, &mut rng);
            let cfg = PlannerConfig {
                rng_seed: attempts,
                ..PlannerConfig::default()
            };
            if let Ok(path) = plan_rrtc(&arm, &a, &b, &scene, &cfg) {
                for wp in &path.waypoints {
                    assert!(!collides(&arm, wp, &scene).unwrap());
                }
                planned += 1;
            }
        }
        assert!(planned >= 10, "planned only {planned} paths");
    }

    #[test]
    fn planner_is_deterministic() {
        let arm = arm();
        let scene = CollisionScene::empty(&arm);
        let a = home();
        let b = JointVector::new(vec![0.8, -0.2, 0.5, 0.4, -0.3, 1.0]);
        let cfg = PlannerConfig {
            rng_seed: 5,
            ..PlannerConfig::default()
        };
        let p1 = plan_rrtc(&arm, &a, &b, &scene, &cfg).unwrap();
        let p2 = plan_rrtc(&arm, &a, &b, &scene, &cfg).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn shortcut_shrinks_or_preserves_length() {
        let arm = arm();
        let scene = CollisionScene::empty(&arm);
        let a = home();
        let b = JointVector::new(vec![1.0, -0.6, 0.4, 0.8, 0.1, -0.9]);
        let cfg = PlannerConfig {
            rng_seed: 9,
            ..PlannerConfig::default()
        };
        let path = plan_rrtc(&arm, &a, &b, &scene, &cfg).unwrap();
        let untouched = shortcut(&path, &scene, &arm, 0, 1).unwrap();
        assert_eq!(untouched, path);
        let cut = shortcut(&path, &scene, &arm, 100, 1).unwrap();
        assert!(cut.arc_length() <= path.arc_length() + 1e-9);
        assert_eq!(cut.waypoints.first(), path.waypoints.first());
        assert_eq!(cut.waypoints.last(), path.waypoints.last());
        // Straight-line-valid path collapses toward the direct segment.
        assert!((cut.arc_length() - a.distance(&b)).abs() < 1e-6);
    }
}
