//! Range-only bearing estimation for static landmarks observed by a moving
//! planar agent.
//!
//! The agent knows its own position `p(k)` and measures only the distance
//! `y(k)` to each landmark. For every landmark a scalar bearing estimate
//! `theta(k)` is propagated by a contraction-based update law; combined with
//! the range it reconstructs the landmark position `l(k) = y(k) v(theta) + p(k)`.
//!
//! Modules, bottom-up:
//!
//! - [`geometry`]: planar vectors, angles and ground-truth quantities.
//! - [`plant`]: the single-integrator agent, trajectory inputs, range sensor.
//! - [`estimator`]: the bearing update law, single and multi-landmark.
//! - [`analysis`]: gain bounds, Jacobian factor, cone and contraction diagnostics.
//! - [`harness`]: declarative scenarios, the experiment runner and its outputs.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail these checks

pub mod analysis;
pub mod error;
pub mod estimator;
pub mod geometry;
pub mod harness;
pub mod plant;

pub use error::{Error, Result};
pub use geometry::{Angle, FramePair, Vec2};
