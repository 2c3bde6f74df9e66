//! Frames, rigid transforms, quaternions, and the pinhole camera model.
//!
//! Conventions used across the crate:
//! - Right-handed camera frame, optical convention: +x right, +y down,
//!   +z forward. "Up" in an image is therefore -y.
//! - Quaternions are kept in a canonical form (`w >= 0`) so that pose
//!   equality is directly testable despite the double cover.
//! - [`Transform`] maps points from its source frame into its target frame
//!   as `R * p + t`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    /// The supplied triad is not orthonormal (or not right-handed).
    #[error("basis is not an orthonormal right-handed triad (max deviation {0:.3e})")]
    NonOrthonormalBasis(f64),
    /// A rotation axis with (near-)zero norm was supplied.
    #[error("rotation axis has near-zero norm")]
    ZeroAxis,
    /// Camera intrinsics violate their invariants.
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
}

// ---------------------------------------------------------------------------
// Vec3
// ---------------------------------------------------------------------------

/// A 3D vector; meters for positions, unitless for directions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Self = Self::new(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub const fn unit_x() -> Self {
        Self::new(1.0, 0.0, 0.0)
    }

    pub const fn unit_y() -> Self {
        Self::new(0.0, 1.0, 0.0)
    }

    pub const fn unit_z() -> Self {
        Self::new(0.0, 0.0, 1.0)
    }

    pub fn dot(self, rhs: Self) -> f64 {
        self.x * rhs.x + self.y * rhs.y + self.z * rhs.z
    }

    pub fn cross(self, rhs: Self) -> Self {
        Self::new(
            self.y * rhs.z - self.z * rhs.y,
            self.z * rhs.x - self.x * rhs.z,
            self.x * rhs.y - self.y * rhs.x,
        )
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    /// Unit vector in the same direction, or `None` for a near-zero input.
    pub fn normalized(self) -> Option<Self> {
        let n = self.norm();
        if n < 1e-12 {
            None
        } else {
            Some(self / n)
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn as_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

impl From<Vec3> for nalgebra::Vector3<f64> {
    fn from(v: Vec3) -> Self {
        nalgebra::Vector3::new(v.x, v.y, v.z)
    }
}

impl From<nalgebra::Vector3<f64>> for Vec3 {
    fn from(v: nalgebra::Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }
}

impl std::ops::Add for Vec3 {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl std::ops::Sub for Vec3 {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

impl std::ops::Neg for Vec3 {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

impl std::ops::Mul<f64> for Vec3 {
    type Output = Self;
    fn mul(self, s: f64) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }
}

impl std::ops::Div<f64> for Vec3 {
    type Output = Self;
    fn div(self, s: f64) -> Self {
        Self::new(self.x / s, self.y / s, self.z / s)
    }
}

// ---------------------------------------------------------------------------
// UnitQuat
// ---------------------------------------------------------------------------

/// A unit quaternion in canonical form: `w >= 0`, and if `w == 0` the first
/// nonzero vector component is positive. Canonicalization collapses the
/// double cover so component-wise comparison is meaningful.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitQuat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl UnitQuat {
    pub fn identity() -> Self {
        Self {
            w: 1.0,
            x: 0.0,
            y: 0.0,
            z: 0.0,
        }
    }

    /// Normalizes and canonicalizes raw components.
    pub fn from_components(w: f64, x: f64, y: f64, z: f64) -> Self {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        debug_assert!(n > 1e-12, "quaternion norm too small: {n}");
        Self {
            w: w / n,
            x: x / n,
            y: y / n,
            z: z / n,
        }
        .canonicalized()
    }

    fn canonicalized(self) -> Self {
        let flip = if self.w != 0.0 {
            self.w < 0.0
        } else if self.x != 0.0 {
            self.x < 0.0
        } else if self.y != 0.0 {
            self.y < 0.0
        } else {
            self.z < 0.0
        };
        if flip {
            Self {
                w: -self.w,
                x: -self.x,
                y: -self.y,
                z: -self.z,
            }
        } else {
            self
        }
    }

    /// Rotation of `angle` radians about a unit `axis` (right-hand rule).
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let half = 0.5 * angle;
        let s = half.sin();
        Self::from_components(half.cos(), axis.x * s, axis.y * s, axis.z * s)
    }

    pub fn rot_x(angle: f64) -> Self {
        Self::from_axis_angle(Vec3::unit_x(), angle)
    }

    pub fn rot_y(angle: f64) -> Self {
        Self::from_axis_angle(Vec3::unit_y(), angle)
    }

    pub fn rot_z(angle: f64) -> Self {
        Self::from_axis_angle(Vec3::unit_z(), angle)
    }

    pub fn conjugate(self) -> Self {
        Self {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
        .canonicalized()
    }

    pub fn inverse(self) -> Self {
        self.conjugate()
    }

    /// Rotates a vector: `q v q*`.
    pub fn rotate(self, v: Vec3) -> Vec3 {
        let u = Vec3::new(self.x, self.y, self.z);
        let uv = u.cross(v);
        let uuv = u.cross(uv);
        v + (uv * self.w + uuv) * 2.0
    }

    /// Row-major rotation matrix.
    pub fn to_matrix(self) -> [[f64; 3]; 3] {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        [
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ]
    }

    /// Shepperd's method; `m` is row-major and assumed orthonormal.
    pub fn from_matrix(m: &[[f64; 3]; 3]) -> Self {
        let trace = m[0][0] + m[1][1] + m[2][2];
        let (w, x, y, z);
        if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            w = 0.25 * s;
            x = (m[2][1] - m[1][2]) / s;
            y = (m[0][2] - m[2][0]) / s;
            z = (m[1][0] - m[0][1]) / s;
        } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
            let s = (1.0 + m[0][0] - m[1][1] - m[2][2]).sqrt() * 2.0;
            w = (m[2][1] - m[1][2]) / s;
            x = 0.25 * s;
            y = (m[0][1] + m[1][0]) / s;
            z = (m[0][2] + m[2][0]) / s;
        } else if m[1][1] > m[2][2] {
            let s = (1.0 + m[1][1] - m[0][0] - m[2][2]).sqrt() * 2.0;
            w = (m[0][2] - m[2][0]) / s;
            x = (m[0][1] + m[1][0]) / s;
            y = 0.25 * s;
            z = (m[1][2] + m[2][1]) / s;
        } else {
            let s = (1.0 + m[2][2] - m[0][0] - m[1][1]).sqrt() * 2.0;
            w = (m[1][0] - m[0][1]) / s;
            x = (m[0][2] + m[2][0]) / s;
            y = (m[1][2] + m[2][1]) / s;
            z = 0.25 * s;
        }
        Self::from_components(w, x, y, z)
    }

    pub fn dot(self, rhs: Self) -> f64 {
        self.w * rhs.w + self.x * rhs.x + self.y * rhs.y + self.z * rhs.z
    }

    /// Geodesic distance in radians, sign-insensitive, in `[0, pi]`.
    /// Computed from the relative quaternion with atan2, which stays
    /// accurate near zero where acos of the dot product loses digits.
    pub fn angle_to(self, rhs: Self) -> f64 {
        let rel = self.conjugate() * rhs;
        let s = (rel.x * rel.x + rel.y * rel.y + rel.z * rel.z).sqrt();
        2.0 * s.atan2(rel.w.abs())
    }

    /// Rotation-vector (axis * angle) form; angle in `[0, pi]` thanks to the
    /// canonical sign.
    pub fn rotation_vector(self) -> Vec3 {
        let v = Vec3::new(self.x, self.y, self.z);
        let s = v.norm();
        if s < 1e-12 {
            // Small-angle limit: sin(a/2) ~ a/2.
            return v * 2.0;
        }
        let angle = 2.0 * s.atan2(self.w);
        v * (angle / s)
    }

    pub fn norm_error(self) -> f64 {
        (self.dot(self).sqrt() - 1.0).abs()
    }
}

impl std::ops::Mul for UnitQuat {
    type Output = Self;

    /// Hamilton product; `(a * b).rotate(v) == a.rotate(b.rotate(v))`.
    fn mul(self, rhs: Self) -> Self {
        let (aw, ax, ay, az) = (self.w, self.x, self.y, self.z);
        let (bw, bx, by, bz) = (rhs.w, rhs.x, rhs.y, rhs.z);
        Self::from_components(
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        )
    }
}

/// Builds the quaternion whose rotation matrix has columns `[t b n]`.
///
/// Fails with [`GeometryError::NonOrthonormalBasis`] when the Gram matrix of
/// the triad deviates from identity by more than 1e-6, or when the triad is
/// left-handed.
pub fn quat_from_basis(t: Vec3, b: Vec3, n: Vec3) -> Result<UnitQuat, GeometryError> {
    let gram_dev = [
        t.dot(t) - 1.0,
        b.dot(b) - 1.0,
        n.dot(n) - 1.0,
        t.dot(b),
        t.dot(n),
        b.dot(n),
    ]
    .iter()
    .fold(0.0_f64, |acc, d| acc.max(d.abs()));
    if gram_dev > 1e-6 {
        return Err(GeometryError::NonOrthonormalBasis(gram_dev));
    }
    let det = t.dot(b.cross(n));
    if (det - 1.0).abs() > 1e-6 {
        return Err(GeometryError::NonOrthonormalBasis((det - 1.0).abs()));
    }
    let m = [[t.x, b.x, n.x], [t.y, b.y, n.y], [t.z, b.z, n.z]];
    Ok(UnitQuat::from_matrix(&m))
}

/// Composes `q` with an intrinsic rotation of `angle` about `axis`, where the
/// axis is expressed in the frame `q` rotates into (body frame).
pub fn rotate_about_axis(q: UnitQuat, axis: Vec3, angle: f64) -> Result<UnitQuat, GeometryError> {
    let unit = axis.normalized().ok_or(GeometryError::ZeroAxis)?;
    Ok(q * UnitQuat::from_axis_angle(unit, angle))
}

// ---------------------------------------------------------------------------
// Pose / Transform
// ---------------------------------------------------------------------------

/// Position plus orientation of a rigid frame.
///
/// Serializes to the wire format `{"p":[x,y,z],"q":[w,x,y,z]}` used by every
/// file in the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    #[serde(rename = "p", with = "vec3_array")]
    pub position: Vec3,
    #[serde(rename = "q", with = "quat_array")]
    pub orientation: UnitQuat,
}

impl Pose {
    pub fn new(position: Vec3, orientation: UnitQuat) -> Self {
        Self {
            position,
            orientation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Vec3::ZERO, UnitQuat::identity())
    }

    /// The frame's z column (the surface normal for leaf frames, the
    /// approach axis for gripper frames).
    pub fn z_axis(&self) -> Vec3 {
        self.orientation.rotate(Vec3::unit_z())
    }
}

/// A rigid transform mapping points from a source frame into a target frame
/// as `R * p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    #[serde(rename = "p", with = "vec3_array")]
    pub translation: Vec3,
    #[serde(rename = "q", with = "quat_array")]
    pub rotation: UnitQuat,
}

impl Transform {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuat::identity(),
            translation: Vec3::ZERO,
        }
    }

    pub fn new(rotation: UnitQuat, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_rotation(rotation: UnitQuat) -> Self {
        Self::new(rotation, Vec3::ZERO)
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self::new(UnitQuat::identity(), translation)
    }

    /// `self.compose(rhs)` applies `rhs` first, then `self`. The rotation is
    /// renormalized by construction.
    pub fn compose(&self, rhs: &Transform) -> Transform {
        Transform {
            rotation: self.rotation * rhs.rotation,
            translation: self.rotation.rotate(rhs.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Transform {
        let inv_rot = self.rotation.inverse();
        Transform {
            rotation: inv_rot,
            translation: -inv_rot.rotate(self.translation),
        }
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        self.rotation.rotate(p) + self.translation
    }

    pub fn apply_pose(&self, pose: &Pose) -> Pose {
        Pose {
            position: self.apply(pose.position),
            orientation: self.rotation * pose.orientation,
        }
    }
}

/// Composes two transforms; the result applies `b` first, then `a`.
pub fn compose(a: &Transform, b: &Transform) -> Transform {
    a.compose(b)
}

/// Applies `T` to a point: `R * p + t`.
pub fn transform_point(t: &Transform, p: Vec3) -> Vec3 {
    t.apply(p)
}

pub(crate) mod vec3_array {
    use super::Vec3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Vec3, s: S) -> Result<S::Ok, S::Error> {
        [v.x, v.y, v.z].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec3, D::Error> {
        let a = <[f64; 3]>::deserialize(d)?;
        Ok(Vec3::new(a[0], a[1], a[2]))
    }
}

pub(crate) mod quat_array {
    use super::UnitQuat;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(q: &UnitQuat, s: S) -> Result<S::Ok, S::Error> {
        [q.w, q.x, q.y, q.z].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<UnitQuat, D::Error> {
        let a = <[f64; 4]>::deserialize(d)?;
        Ok(UnitQuat::from_components(a[0], a[1], a[2], a[3]))
    }
}

// ---------------------------------------------------------------------------
// Camera model
// ---------------------------------------------------------------------------

/// Pinhole intrinsics. Integer pixel coordinates address pixel centers, so a
/// point at depth `d` projects to `u = x * fx / d + cx`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Self {
        Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        }
    }

    /// 640x480 lens roughly matching a short-range RGB-D module.
    pub fn default_vga() -> Self {
        Self::new(600.0, 600.0, 320.0, 240.0, 640, 480)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !(0.0 <= self.cx && self.cx < self.width as f64) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "cx={} outside [0, {})",
                self.cx, self.width
            )));
        }
        if !(0.0 <= self.cy && self.cy < self.height as f64) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "cy={} outside [0, {})",
                self.cy, self.height
            )));
        }
        Ok(())
    }

    /// Ray direction (unnormalized, z = 1) through pixel `(u, v)`.
    pub fn pixel_ray(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    /// Projects a camera-frame point to pixel coordinates; `None` behind the
    /// camera.
    pub fn project(&self, p: Vec3) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((
            p.x * self.fx / p.z + self.cx,
            p.y * self.fy / p.z + self.cy,
        ))
    }
}
