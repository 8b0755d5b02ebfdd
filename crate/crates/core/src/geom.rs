//! Sensor measurement types and SO(3)/SE(3) helpers.
//!
//! Rotations are stored as unit quaternions; matrices are produced on demand.
//! Every constructor that accepts external data checks finiteness so that NaN
//! never reaches the filter.

use std::ops::Mul;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

/// Below this angle `so3_exp`/`so3_log` switch to their Taylor expansions.
pub const SMALL_ANGLE: f64 = 1e-8;

/// A single LiDAR return in the sensor frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point3 {
    coords: Vector3<f64>,
    intensity: f32,
    time_offset: f64,
}

impl Point3 {
    /// Panics on non-finite coordinates; use [`Point3::try_new`] for untrusted input.
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self::from_coords(Vector3::new(x, y, z))
    }

    pub fn try_new(x: f64, y: f64, z: f64, intensity: f32, time_offset: f64) -> Result<Self> {
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite point ({x}, {y}, {z})"
            )));
        }
        if !intensity.is_finite() || !time_offset.is_finite() || time_offset < 0.0 {
            return Err(Error::InvalidInput(format!(
                "bad intensity/time offset ({intensity}, {time_offset})"
            )));
        }
        Ok(Self {
            coords: Vector3::new(x, y, z),
            intensity,
            time_offset,
        })
    }

    pub fn from_coords(coords: Vector3<f64>) -> Self {
        assert!(
            coords.iter().all(|c| c.is_finite()),
            "non-finite point coordinates: {coords:?}"
        );
        Self {
            coords,
            intensity: 0.0,
            time_offset: 0.0,
        }
    }

    #[inline]
    pub fn coords(&self) -> &Vector3<f64> {
        &self.coords
    }

    #[inline]
    pub fn x(&self) -> f64 {
        self.coords.x
    }

    #[inline]
    pub fn y(&self) -> f64 {
        self.coords.y
    }

    #[inline]
    pub fn z(&self) -> f64 {
        self.coords.z
    }

    #[inline]
    pub fn intensity(&self) -> f32 {
        self.intensity
    }

    #[inline]
    pub fn time_offset(&self) -> f64 {
        self.time_offset
    }

    /// Same attributes, new position.
    pub fn with_coords(self, coords: Vector3<f64>) -> Self {
        Self {
            coords: Self::from_coords(coords).coords,
            ..self
        }
    }

    pub fn with_intensity(mut self, intensity: f32) -> Self {
        self.intensity = intensity;
        self
    }

    pub fn with_time_offset(mut self, time_offset: f64) -> Self {
        debug_assert!(time_offset.is_finite() && time_offset >= 0.0);
        self.time_offset = time_offset;
        self
    }

    pub fn norm(&self) -> f64 {
        self.coords.norm()
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        (self.coords - other.coords).norm()
    }
}

/// One sweep of the LiDAR with absolute start/end stamps.
#[derive(Debug, Clone, PartialEq)]
pub struct LidarScan {
    pub points: Vec<Point3>,
    t_start: f64,
    t_end: f64,
}

impl LidarScan {
    pub fn new(points: Vec<Point3>, t_start: f64, t_end: f64) -> Result<Self> {
        if !(t_start.is_finite() && t_end.is_finite()) || t_end <= t_start {
            return Err(Error::InvalidInput(format!(
                "scan window [{t_start}, {t_end}] is empty or non-finite"
            )));
        }
        let duration = t_end - t_start;
        // f32 storage of offsets can overshoot the window by one ulp.
        let slack = 1e-6 * duration.max(1.0);
        if let Some(p) = points.iter().find(|p| p.time_offset > duration + slack) {
            return Err(Error::InvalidInput(format!(
                "point time offset {} exceeds scan duration {duration}",
                p.time_offset
            )));
        }
        Ok(Self {
            points,
            t_start,
            t_end,
        })
    }

    #[inline]
    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    #[inline]
    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Gyroscope (rad/s) and accelerometer (m/s², specific force) reading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    pub gyro: Vector3<f64>,
    pub accel: Vector3<f64>,
}

impl ImuSample {
    pub fn new(t: f64, gyro: Vector3<f64>, accel: Vector3<f64>) -> Result<Self> {
        let finite = t.is_finite()
            && gyro.iter().all(|v| v.is_finite())
            && accel.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidInput(format!(
                "non-finite imu sample at t = {t}"
            )));
        }
        Ok(Self { t, gyro, accel })
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite()
            && self.gyro.iter().all(|v| v.is_finite())
            && self.accel.iter().all(|v| v.is_finite())
    }

    /// Linear interpolation between two samples at time `t`.
    pub fn lerp(&self, other: &ImuSample, t: f64) -> ImuSample {
        let span = other.t - self.t;
        let s = if span.abs() < 1e-12 {
            0.0
        } else {
            ((t - self.t) / span).clamp(0.0, 1.0)
        };
        ImuSample {
            t,
            gyro: self.gyro + (other.gyro - self.gyro) * s,
            accel: self.accel + (other.accel - self.accel) * s,
        }
    }
}

/// Element of SO(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(UnitQuaternion<f64>);

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Self(UnitQuaternion::identity())
    }

    /// Builds from (w, x, y, z), normalizing. Fails on a zero or non-finite quaternion.
    pub fn from_wxyz(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let q = Quaternion::new(w, x, y, z);
        let n = q.norm();
        if !n.is_finite() || n < 1e-12 {
            return Err(Error::InvalidInput(format!(
                "cannot normalize quaternion ({w}, {x}, {y}, {z})"
            )));
        }
        Ok(Self(UnitQuaternion::new_normalize(q)))
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n < f64::EPSILON {
            return Self::identity();
        }
        so3_exp(&(axis / n * angle))
    }

    pub fn from_unit_quaternion(q: UnitQuaternion<f64>) -> Self {
        Self(UnitQuaternion::new_normalize(q.into_inner()))
    }

    /// Rotation Rz(yaw)·Ry(pitch)·Rx(roll).
    pub fn from_euler_zyx(yaw: f64, pitch: f64, roll: f64) -> Self {
        let rz = so3_exp(&Vector3::new(0.0, 0.0, yaw));
        let ry = so3_exp(&Vector3::new(0.0, pitch, 0.0));
        let rx = so3_exp(&Vector3::new(roll, 0.0, 0.0));
        rz * ry * rx
    }

    #[inline]
    pub fn quaternion(&self) -> &UnitQuaternion<f64> {
        &self.0
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        self.0.to_rotation_matrix().into_inner()
    }

    pub fn inverse(&self) -> Self {
        Self(self.0.inverse())
    }

    #[inline]
    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0.transform_vector(v)
    }

    #[inline]
    pub fn inverse_rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0.inverse_transform_vector(v)
    }

    /// Right-perturbation retraction `self · exp(delta)`.
    pub fn retract(&self, delta: &Vector3<f64>) -> Self {
        *self * so3_exp(delta)
    }

    /// `log(self⁻¹ · other)`, the tangent vector taking `self` to `other`.
    pub fn local(&self, other: &Rotation) -> Vector3<f64> {
        so3_log(&(self.inverse() * *other))
    }

    /// Geodesic interpolation; `s = 0` gives `self`, `s = 1` gives `other`.
    pub fn slerp(&self, other: &Rotation, s: f64) -> Self {
        self.retract(&(self.local(other) * s))
    }

    pub fn angle_to(&self, other: &Rotation) -> f64 {
        self.local(other).norm()
    }

    /// Euler angles (yaw, pitch, roll) of the ZYX convention.
    pub fn euler_zyx(&self) -> (f64, f64, f64) {
        let (roll, pitch, yaw) = self.0.euler_angles();
        (yaw, pitch, roll)
    }
}

impl Mul for Rotation {
    type Output = Rotation;

    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(UnitQuaternion::new_normalize((self.0 * rhs.0).into_inner()))
    }
}

/// Exponential map R³ → SO(3).
pub fn so3_exp(omega: &Vector3<f64>) -> Rotation {
    let theta_sq = omega.norm_squared();
    let theta = theta_sq.sqrt();
    let q = if theta < SMALL_ANGLE {
        let v = omega * (0.5 - theta_sq / 48.0);
        Quaternion::new(1.0 - theta_sq / 8.0, v.x, v.y, v.z)
    } else {
        let half = 0.5 * theta;
        let v = omega * (half.sin() / theta);
        Quaternion::new(half.cos(), v.x, v.y, v.z)
    };
    Rotation(UnitQuaternion::new_normalize(q))
}

/// Logarithm SO(3) → R³ on the principal branch (norm ≤ π).
pub fn so3_log(r: &Rotation) -> Vector3<f64> {
    let q = r.0.quaternion();
    let (mut w, mut v) = (q.w, q.imag());
    if w < 0.0 {
        w = -w;
        v = -v;
    }
    let n = v.norm();
    if n < SMALL_ANGLE {
        // atan2(n, w) ≈ n/w − n³/(3w³)
        v * (2.0 / w) * (1.0 - n * n / (3.0 * w * w))
    } else {
        v * (2.0 * n.atan2(w) / n)
    }
}

/// Cross-product matrix: `skew(a) * b == a × b`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rigid transform (rotation then translation).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::new(Rotation::identity(), translation)
    }

    pub fn inverse(&self) -> Self {
        let rotation = self.rotation.inverse();
        Self::new(rotation, -rotation.rotate(&self.translation))
    }

    #[inline]
    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(v) + self.translation
    }

    /// Interpolates translation linearly and rotation geodesically.
    pub fn interpolate(&self, other: &Pose, s: f64) -> Pose {
        Pose::new(
            self.rotation.slerp(&other.rotation, s),
            self.translation + (other.translation - self.translation) * s,
        )
    }

    pub fn is_finite(&self) -> bool {
        self.translation.iter().all(|v| v.is_finite())
            && self.rotation.quaternion().coords.iter().all(|v| v.is_finite())
    }
}

impl Mul for Pose {
    type Output = Pose;

    fn mul(self, rhs: Pose) -> Pose {
        Pose::new(
            self.rotation * rhs.rotation,
            self.rotation.rotate(&rhs.translation) + self.translation,
        )
    }
}

/// `R·p + t`, keeping intensity and time offset.
pub fn transform_point(pose: &Pose, p: &Point3) -> Point3 {
    p.with_coords(pose.transform_vector(p.coords()))
}
