//! Planar vector and angle primitives, plus the ground-truth quantities the
//! estimator is graded against: true bearing, the estimator frame, the mirror
//! landmark and the mirror error.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ranges below this are treated as coincident points.
pub const MIN_RANGE: f64 = 1e-9;

/// A planar point or vector, in meters (or m/s for velocities).
///
/// Serialized as a two-element array `[x, y]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Unit vector at angle `a` from the x-axis.
    pub fn from_angle(a: f64) -> Self {
        let (s, c) = a.sin_cos();
        Self::new(c, s)
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 3-D cross product.
    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Four-quadrant angle of the vector.
    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (self - other).norm()
    }
}

impl From<[f64; 2]> for Vec2 {
    fn from([x, y]: [f64; 2]) -> Self {
        Self { x, y }
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.x, v.y]
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, rhs: Vec2) {
        self.x += rhs.x;
        self.y += rhs.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Mul<Vec2> for f64 {
    type Output = Vec2;
    fn mul(self, v: Vec2) -> Vec2 {
        v * self
    }
}

impl fmt::Display for Vec2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// An angle in radians.
///
/// The stored value is unbounded (accumulated); [`Angle::wrapped`] gives the
/// canonical view in `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct Angle(pub f64);

impl Angle {
    pub const fn from_radians(r: f64) -> Self {
        Angle(r)
    }

    pub fn from_degrees(d: f64) -> Self {
        Angle(d.to_radians())
    }

    pub fn radians(self) -> f64 {
        self.0
    }

    pub fn degrees(self) -> f64 {
        self.0.to_degrees()
    }

    pub fn wrapped(self) -> Angle {
        Angle(wrap_angle(self.0))
    }
}

/// Maps `a` onto the branch `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// The estimator frame: `v` points toward the estimated landmark, `w` is `v`
/// rotated by `-pi/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FramePair {
    pub v: Vec2,
    pub w: Vec2,
}

pub fn unit_vectors(theta: f64) -> FramePair {
    let (s, c) = theta.sin_cos();
    FramePair {
        v: Vec2::new(c, s),
        w: Vec2::new(s, -c),
    }
}

/// Four-quadrant bearing of `landmark` seen from `agent_pos`, wrapped.
pub fn true_bearing(landmark: Vec2, agent_pos: Vec2) -> Result<Angle> {
    let rel = landmark - agent_pos;
    if !rel.is_finite() {
        return Err(Error::domain("non-finite position"));
    }
    if rel.norm() < MIN_RANGE {
        return Err(Error::domain("bearing undefined at zero range"));
    }
    Ok(Angle(rel.angle()))
}

/// Reflection of `landmark` across the line through `agent_pos` along
/// `direction`.
pub fn mirror_point(landmark: Vec2, agent_pos: Vec2, direction: Vec2) -> Result<Vec2> {
    let len = direction.norm();
    if !(len > 0.0) || !len.is_finite() {
        return Err(Error::domain("mirror axis direction must be non-zero"));
    }
    let axis = direction * (1.0 / len);
    let rel = landmark - agent_pos;
    let along = axis * rel.dot(axis);
    Ok(agent_pos + along * 2.0 - rel)
}

/// Bearing error reached when the estimate locks onto the mirror landmark:
/// twice the angle between `landmark - agent_pos` and `direction`, in `[0, 2pi]`.
pub fn mirror_error_alpha(landmark: Vec2, agent_pos: Vec2, direction: Vec2) -> Result<Angle> {
    let rel = landmark - agent_pos;
    let r = rel.norm();
    let d = direction.norm();
    if r < MIN_RANGE {
        return Err(Error::domain("mirror error undefined at zero range"));
    }
    if !(d > 0.0) {
        return Err(Error::domain("mirror axis direction must be non-zero"));
    }
    let cos = (rel.dot(direction) / (r * d)).clamp(-1.0, 1.0);
    Ok(Angle(2.0 * cos.acos()))
}
