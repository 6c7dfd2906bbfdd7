//! The moving agent: single-integrator kinematics `p(k+1) = p(k) + T u(k)`,
//! velocity inputs generated from parametric paths, the range sensor, and
//! landmark placement.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Vec2, MIN_RANGE};

pub const DEFAULT_SMALL_ANGLE_CAP: f64 = 0.05;

fn default_small_angle_cap() -> f64 {
    DEFAULT_SMALL_ANGLE_CAP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    /// Sampling time `T` in seconds.
    pub sampling_time: f64,
    /// Upper bound on every generated `|u(k)|`, in m/s.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speed_cap: Option<f64>,
    /// Abort the run when the per-step budget `T|u|/y` exceeds `small_angle_cap`.
    #[serde(default)]
    pub strict_small_angle: bool,
    #[serde(default = "default_small_angle_cap")]
    pub small_angle_cap: f64,
}

impl PlantConfig {
    pub fn new(sampling_time: f64) -> Self {
        Self {
            sampling_time,
            speed_cap: None,
            strict_small_angle: false,
            small_angle_cap: DEFAULT_SMALL_ANGLE_CAP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sampling_time > 0.0 && self.sampling_time.is_finite()) {
            return Err(Error::config("sampling_time must be finite and > 0"));
        }
        if let Some(cap) = self.speed_cap {
            if !(cap > 0.0) {
                return Err(Error::config("speed_cap must be > 0"));
            }
        }
        if !(self.small_angle_cap > 0.0) {
            return Err(Error::config("small_angle_cap must be > 0"));
        }
        Ok(())
    }
}

/// A planned agent path. Angles in radians, rates in rad/s, lengths in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrajectoryPlan {
    StraightLine {
        start: Vec2,
        heading: f64,
        speed: f64,
    },
    Arc {
        center: Vec2,
        radius: f64,
        angular_rate: f64,
        #[serde(default)]
        start_angle: f64,
    },
    /// Axis-aligned ellipse `center + (a cos phi, b sin phi)` with
    /// `phi = start_angle + angular_rate * t`.
    Ellipse {
        center: Vec2,
        semi_major: f64,
        semi_minor: f64,
        angular_rate: f64,
        #[serde(default)]
        start_angle: f64,
    },
    /// Polyline traversed at constant speed; the agent stops at the last point.
    Waypoints {
        points: Vec<Vec2>,
        speed: f64,
    },
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("{name} must be finite and > 0, got {v}")))
    }
}

fn finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("{name} must be finite")))
    }
}

fn nonzero_rate(v: f64) -> Result<()> {
    if v != 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config("angular_rate must be finite and non-zero"))
    }
}

impl TrajectoryPlan {
    pub fn validate(&self) -> Result<()> {
        match self {
            TrajectoryPlan::StraightLine { start, heading, speed } => {
                if !start.is_finite() {
                    return Err(Error::config("start must be finite"));
                }
                finite("heading", *heading)?;
                positive("speed", *speed)
            }
            TrajectoryPlan::Arc {
                center,
                radius,
                angular_rate,
                start_angle,
            } => {
                if !center.is_finite() {
                    return Err(Error::config("center must be finite"));
                }
                positive("radius", *radius)?;
                nonzero_rate(*angular_rate)?;
                finite("start_angle", *start_angle)
            }
            TrajectoryPlan::Ellipse {
                center,
                semi_major,
                semi_minor,
                angular_rate,
                start_angle,
            } => {
                if !center.is_finite() {
                    return Err(Error::config("center must be finite"));
                }
                positive("semi_major", *semi_major)?;
                positive("semi_minor", *semi_minor)?;
                nonzero_rate(*angular_rate)?;
                finite("start_angle", *start_angle)
            }
            TrajectoryPlan::Waypoints { points, speed } => {
                if points.len() < 2 {
                    return Err(Error::config("waypoint list needs at least two points"));
                }
                if points.iter().any(|p| !p.is_finite()) {
                    return Err(Error::config("waypoints must be finite"));
                }
                if points.windows(2).any(|w| w[0].distance(w[1]) == 0.0) {
                    return Err(Error::config("consecutive waypoints must differ"));
                }
                positive("speed", *speed)
            }
        }
    }

    /// Position on the planned path at time `t` (no validation).
    pub fn position_at(&self, t: f64) -> Vec2 {
        match self {
            TrajectoryPlan::StraightLine { start, heading, speed } => *start + Vec2::from_angle(*heading) * (speed * t),
            TrajectoryPlan::Arc {
                center,
                radius,
                angular_rate,
                start_angle,
            } => *center + Vec2::from_angle(start_angle + angular_rate * t) * *radius,
            TrajectoryPlan::Ellipse {
                center,
                semi_major,
                semi_minor,
                angular_rate,
                start_angle,
            } => {
                let (s, c) = (start_angle + angular_rate * t).sin_cos();
                *center + Vec2::new(semi_major * c, semi_minor * s)
            }
            TrajectoryPlan::Waypoints { points, speed } => {
                let mut remaining = speed * t.max(0.0);
                for seg in points.windows(2) {
                    let len = seg[0].distance(seg[1]);
                    if remaining <= len {
                        return seg[0] + (seg[1] - seg[0]) * (remaining / len);
                    }
                    remaining -= len;
                }
                *points.last().expect("validated non-empty")
            }
        }
    }

    pub fn start(&self) -> Vec2 {
        self.position_at(0.0)
    }

    /// Number of steps for one closed lap, for periodic plans.
    pub fn steps_per_lap(&self, dt: f64) -> Option<f64> {
        match self {
            TrajectoryPlan::Arc { angular_rate, .. } | TrajectoryPlan::Ellipse { angular_rate, .. } => {
                Some(TAU / (angular_rate.abs() * dt))
            }
            _ => None,
        }
    }

    /// Whether successive inputs are collinear for the whole run.
    pub fn is_straight(&self) -> bool {
        match self {
            TrajectoryPlan::StraightLine { .. } => true,
            TrajectoryPlan::Waypoints { points, .. } => points.windows(3).all(|w| {
                let a = w[1] - w[0];
                let b = w[2] - w[1];
                a.cross(b).abs() <= 1e-12 * a.norm() * b.norm() && a.dot(b) > 0.0
            }),
            _ => false,
        }
    }
}

/// One plant step: `p + T u`.
pub fn step_plant(p: Vec2, u: Vec2, dt: f64) -> Vec2 {
    p + u * dt
}

/// Velocity input at step `k`: the exact finite difference of the planned
/// path between sample times, so that integrating the inputs reproduces the
/// path at every sample.
pub fn gen_input(plan: &TrajectoryPlan, k: usize, dt: f64) -> Result<Vec2> {
    positive("sampling time", dt)?;
    plan.validate()?;
    Ok(input_unchecked(plan, k, dt))
}

pub(crate) fn input_unchecked(plan: &TrajectoryPlan, k: usize, dt: f64) -> Vec2 {
    match plan {
        // exact derivative; keeps every input bit-identical and collinear
        TrajectoryPlan::StraightLine { heading, speed, .. } => Vec2::from_angle(*heading) * *speed,
        _ => {
            let t0 = k as f64 * dt;
            let t1 = (k + 1) as f64 * dt;
            (plan.position_at(t1) - plan.position_at(t0)) * (1.0 / dt)
        }
    }
}

/// Inputs `u(0..steps)` for a plan, checked against the plant's speed cap.
pub fn input_sequence(plan: &TrajectoryPlan, config: &PlantConfig, steps: usize) -> Result<Vec<Vec2>> {
    config.validate()?;
    plan.validate()?;
    let dt = config.sampling_time;
    let mut inputs = Vec::with_capacity(steps);
    for k in 0..steps {
        let u = input_unchecked(plan, k, dt);
        if !u.is_finite() {
            return Err(Error::config(format!("non-finite input at step {k}")));
        }
        if let Some(cap) = config.speed_cap {
            if u.norm() > cap {
                return Err(Error::config(format!(
                    "input speed {} at step {k} exceeds speed_cap {cap}",
                    u.norm()
                )));
            }
        }
        inputs.push(u);
    }
    Ok(inputs)
}

/// Per-step displacement angle `T|u| / y` that must stay small for the
/// bearing-increment approximation to hold.
pub fn small_angle_budget(u: Vec2, range: f64, dt: f64) -> f64 {
    dt * u.norm() / range
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementModel {
    /// Standard deviation of additive Gaussian range noise, meters.
    #[serde(default)]
    pub noise_std: f64,
    /// Seed for the noise stream; overridden by the run seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl MeasurementModel {
    pub fn noiseless() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::config("noise_std must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Range sensor realizing a [`MeasurementModel`].
#[derive(Debug, Clone)]
pub struct RangeSensor {
    noise: Option<(Normal<f64>, ChaCha8Rng)>,
}

impl RangeSensor {
    pub fn new(model: &MeasurementModel, fallback_seed: u64) -> Result<Self> {
        model.validate()?;
        let noise = if model.noise_std > 0.0 {
            let normal = Normal::new(0.0, model.noise_std).map_err(|e| Error::config(format!("noise model: {e}")))?;
            let rng = ChaCha8Rng::seed_from_u64(model.seed.unwrap_or(fallback_seed));
            Some((normal, rng))
        } else {
            None
        };
        Ok(Self { noise })
    }

    pub fn noiseless() -> Self {
        Self { noise: None }
    }

    pub fn measure(&mut self, landmark: Vec2, p: Vec2) -> Result<f64> {
        let exact = true_range(landmark, p)?;
        Ok(match &mut self.noise {
            None => exact,
            Some((normal, rng)) => (exact + normal.sample(rng)).max(0.0),
        })
    }
}

/// Noiseless range `|l - p|`, rejecting coincident points.
pub fn true_range(landmark: Vec2, p: Vec2) -> Result<f64> {
    let r = landmark.distance(p);
    if !r.is_finite() {
        return Err(Error::domain("non-finite range"));
    }
    if r < MIN_RANGE {
        return Err(Error::domain("range measurement at zero range"));
    }
    Ok(r)
}

/// Single-shot range measurement under `model`.
pub fn measure_range(landmark: Vec2, p: Vec2, model: &MeasurementModel) -> Result<f64> {
    RangeSensor::new(model, 0)?.measure(landmark, p)
}

/// `count` points distributed uniformly over the area of the annulus
/// `inner <= |x - center| <= outer`.
pub fn landmark_ring_sampler(center: Vec2, inner: f64, outer: f64, count: usize, seed: u64) -> Result<Vec<Vec2>> {
    if !(inner > 0.0 && inner < outer && outer.is_finite()) {
        return Err(Error::config(format!(
            "ring radii must satisfy 0 < inner < outer, got inner={inner} outer={outer}"
        )));
    }
    if count == 0 {
        return Err(Error::config("ring sampler count must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (i2, o2) = (inner * inner, outer * outer);
    Ok((0..count)
        .map(|_| {
            let u: f64 = rng.random();
            let r = (i2 + u * (o2 - i2)).sqrt().clamp(inner, outer);
            let phi = rng.random::<f64>() * TAU;
            center + Vec2::from_angle(phi) * r
        })
        .collect())
}
