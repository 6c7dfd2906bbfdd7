//! Gain admissibility and contraction diagnostics.
//!
//! The estimator state is scalar per landmark, so the contraction condition
//! reduces to keeping the derivative of the update map with respect to
//! `theta` strictly inside `(-1, 1)`:
//!
//! ```text
//! df/dtheta = 1 + T/y <u, v> - 2 gamma T y |<u, w>|
//! ```
//!
//! If the motion stays in a cone `|<u, w>| >= c |u|` for some `0 < c < 1`,
//! any gain with
//!
//! ```text
//! 1 / (2 c y^2)  <  gamma  <  (2 y - T|u|) / (2 T y^2 |u|)
//! ```
//!
//! satisfies it, and such a gain exists whenever `T|u| < 2c/(1+c) y`.

use crate::error::{Error, Result};
use crate::estimator::CONE_EPS;
use crate::geometry::{unit_vectors, Vec2};

/// Upper clamp for an empirically measured cone parameter.
pub const CONE_C_MAX: f64 = 1.0 - 1e-9;

/// Gaps below this end the fitting window of [`contraction_rate_estimate`].
pub const GAP_FLOOR: f64 = 1e-14;

/// Conservative gain interval valid for every motion inside the cone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainBounds {
    pub lower: f64,
    pub upper: f64,
    pub admissible: bool,
}

impl GainBounds {
    /// Strict containment `lower < gamma < upper`.
    pub fn contains(&self, gamma: f64) -> bool {
        gamma > self.lower && gamma < self.upper
    }
}

pub fn gain_bounds(range: f64, u_norm: f64, dt: f64, c: f64) -> Result<GainBounds> {
    if !(range > 0.0 && u_norm > 0.0 && dt > 0.0) {
        return Err(Error::domain(format!(
            "gain bounds need positive range, speed and sampling time (y={range}, |u|={u_norm}, T={dt})"
        )));
    }
    check_cone(c)?;
    let y2 = range * range;
    let lower = 1.0 / (2.0 * c * y2);
    let upper = (2.0 * range - dt * u_norm) / (2.0 * dt * y2 * u_norm);
    Ok(GainBounds {
        lower,
        upper,
        admissible: lower < upper,
    })
}

fn check_cone(c: f64) -> Result<()> {
    if c > 0.0 && c < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("cone parameter must lie in (0, 1), got {c}")))
    }
}

/// Strict cap on `T |u|` below which [`gain_bounds`] is admissible at
/// every range `>= min_range`.
pub fn admissible_speed(c: f64, min_range: f64) -> Result<f64> {
    check_cone(c)?;
    if !(min_range > 0.0) {
        return Err(Error::domain("min_range must be > 0"));
    }
    Ok(2.0 * c / (1.0 + c) * min_range)
}

/// Derivative of the update map with respect to the bearing estimate.
///
/// For `sign(<u, w>) = +1` this is `1 + T/y <u,v> - 2 gamma T y <u,w>`, for
/// `-1` it is `1 + T/y <u,v> + 2 gamma T y <u,w>`. When `<u, w>` vanishes
/// the correction is skipped and only the propagation term remains.
pub fn jacobian_factor(theta: f64, range: f64, u: Vec2, dt: f64, gamma: f64) -> Result<f64> {
    if !(range > 0.0 && dt > 0.0 && gamma > 0.0) {
        return Err(Error::domain(format!(
            "jacobian needs positive range, sampling time and gain (y={range}, T={dt}, gamma={gamma})"
        )));
    }
    let frame = unit_vectors(theta);
    let uv = u.dot(frame.v);
    let uw = u.dot(frame.w);
    let base = 1.0 + dt / range * uv;
    Ok(if uw.abs() <= CONE_EPS {
        base
    } else if uw > 0.0 {
        base - 2.0 * gamma * dt * range * uw
    } else {
        base + 2.0 * gamma * dt * range * uw
    })
}

/// Exact per-step gain interval for `|jacobian_factor| < 1`, from the
/// instantaneous inner products. Diagnostic overlay; the lower end may be
/// negative when the agent moves away from the estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstantBounds {
    pub lower: f64,
    pub upper: f64,
}

pub fn instantaneous_bounds(theta: f64, range: f64, u: Vec2, dt: f64) -> Result<Option<InstantBounds>> {
    if !(range > 0.0 && dt > 0.0) {
        return Err(Error::domain(
            "instantaneous bounds need positive range and sampling time",
        ));
    }
    let frame = unit_vectors(theta);
    let uv = u.dot(frame.v);
    let uw = u.dot(frame.w).abs();
    if uw <= CONE_EPS {
        return Ok(None);
    }
    let y2 = range * range;
    Ok(Some(InstantBounds {
        lower: uv / (2.0 * y2 * uw),
        upper: (2.0 * range + dt * uv) / (2.0 * dt * y2 * uw),
    }))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConeCheck {
    /// Smallest `|<u, w>| / |u|` seen, clamped to `[0, CONE_C_MAX]`.
    pub c: f64,
    /// Smallest `|<u, w>| / |u| - c_ref`, with `c_ref` the requested cone
    /// parameter or `c` itself.
    pub min_margin: f64,
    /// Steps skipped because `|u| = 0`.
    pub excluded_steps: usize,
}

impl ConeCheck {
    /// Whether the run stayed in a cone with a strictly positive parameter.
    pub fn satisfies_hypothesis(&self) -> bool {
        self.c > 0.0 && self.min_margin >= 0.0
    }
}

/// `|<u, w>| / |u|`, or `None` for a zero input.
pub fn cone_ratio(u: Vec2, w: Vec2) -> Option<f64> {
    let n = u.norm();
    (n > 0.0).then(|| u.dot(w).abs() / n)
}

pub fn cone_parameter(u_trace: &[Vec2], w_trace: &[Vec2], requested_c: Option<f64>) -> Result<ConeCheck> {
    if u_trace.is_empty() || u_trace.len() != w_trace.len() {
        return Err(Error::domain(format!(
            "cone traces must be non-empty and aligned ({} inputs, {} frames)",
            u_trace.len(),
            w_trace.len()
        )));
    }
    if let Some(c) = requested_c {
        check_cone(c)?;
    }
    let ratios: Vec<f64> = u_trace
        .iter()
        .zip(w_trace)
        .filter_map(|(&u, &w)| cone_ratio(u, w))
        .collect();
    let excluded_steps = u_trace.len() - ratios.len();
    if ratios.is_empty() {
        return Err(Error::domain("every step in the cone trace has zero speed"));
    }
    let raw = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let c = raw.clamp(0.0, CONE_C_MAX);
    let reference = requested_c.unwrap_or(c);
    let min_margin = ratios.iter().map(|r| r - reference).fold(f64::INFINITY, f64::min);
    Ok(ConeCheck {
        c,
        min_margin,
        excluded_steps,
    })
}

/// Empirical contraction rate: `exp` of the least-squares slope of
/// `ln |gap|` against the step index. The fit stops at the first gap below
/// [`GAP_FLOOR`].
pub fn contraction_rate_estimate(gap_trace: &[f64]) -> Result<f64> {
    if gap_trace.len() < 3 {
        return Err(Error::domain("contraction fit needs at least 3 gaps"));
    }
    let window: Vec<f64> = gap_trace
        .iter()
        .map(|g| g.abs())
        .take_while(|&g| g >= GAP_FLOOR)
        .collect();
    if window.len() < 2 {
        return Err(Error::domain("fewer than 2 gaps above the numerical floor"));
    }
    let n = window.len() as f64;
    let mean_k = (n - 1.0) / 2.0;
    let logs: Vec<f64> = window.iter().map(|g| g.ln()).collect();
    let mean_log = logs.iter().sum::<f64>() / n;
    let (num, den) = logs.iter().enumerate().fold((0.0, 0.0), |(num, den), (k, l)| {
        let dk = k as f64 - mean_k;
        (num + dk * (l - mean_log), den + dk * dk)
    });
    Ok((num / den).exp())
}

/// Per-step Jacobian factors of one run and their summary.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ContractionDiagnostics {
    pub jacobian_trace: Vec<f64>,
    pub lambda_max: f64,
    pub empirical_rate: Option<f64>,
}

impl ContractionDiagnostics {
    pub fn from_trace(jacobian_trace: Vec<f64>) -> Self {
        let lambda_max = jacobian_trace.iter().fold(0.0f64, |m, j| m.max(j.abs()));
        Self {
            jacobian_trace,
            lambda_max,
            empirical_rate: None,
        }
    }

    pub fn with_gap_trace(mut self, gaps: &[f64]) -> Self {
        self.empirical_rate = contraction_rate_estimate(gaps).ok();
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::adaptive_gain;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn gain_bound_examples() {
        let b = gain_bounds(10.0, 1.0, 0.1, 0.5).unwrap();
        assert_abs_diff_eq!(b.lower, 0.01, epsilon = 1e-15);
        assert_abs_diff_eq!(b.upper, 0.995, epsilon = 1e-12);
        assert!(b.admissible);

        let b = gain_bounds(2.0, 4.0, 1.0, 0.5).unwrap();
        assert_eq!(b.upper, 0.0);
        assert!(!b.admissible);

        for args in [(0.0, 1.0, 0.1, 0.5), (1.0, 0.0, 0.1, 0.5), (1.0, 1.0, 0.0, 0.5)] {
            assert!(gain_bounds(args.0, args.1, args.2, args.3).is_err());
        }
        assert!(gain_bounds(1.0, 1.0, 0.1, 1.0).is_err());
        assert!(gain_bounds(1.0, 1.0, 0.1, 0.0).is_err());
    }

    #[test]
    fn admissible_speed_examples() {
        assert_abs_diff_eq!(admissible_speed(0.5, 10.0).unwrap(), 20.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(admissible_speed(1.0 - 1e-12, 7.0).unwrap(), 7.0, epsilon = 1e-9);
        assert!(admissible_speed(1.5, 1.0).is_err());
        assert!(admissible_speed(0.5, 0.0).is_err());

        // just under the cap the bounds are admissible at the minimum range
        let (c, y, dt) = (0.4, 3.0, 0.1);
        let cap = admissible_speed(c, y).unwrap();
        let b = gain_bounds(y, 0.999 * cap / dt, dt, c).unwrap();
        assert!(b.admissible);
        let b = gain_bounds(y, 1.001 * cap / dt, dt, c).unwrap();
        assert!(!b.admissible);
    }

    #[test]
    fn jacobian_examples() {
        assert_eq!(jacobian_factor(0.3, 5.0, Vec2::ZERO, 0.1, 2.0).unwrap(), 1.0);

        // motion orthogonal to v with the adaptive gain is deadbeat
        let (range, dt, theta) = (7.0, 0.05, 0.8);
        let u = unit_vectors(theta).w * 1.5;
        let g = adaptive_gain(range, u.norm(), dt).unwrap();
        assert_abs_diff_eq!(jacobian_factor(theta, range, u, dt, g).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(jacobian_factor(theta, range, -u, dt, g).unwrap(), 0.0, epsilon = 1e-12);

        let j = jacobian_factor(0.2, 2.0, Vec2::new(0.0, 1.0), 0.1, 0.5).unwrap();
        assert_abs_diff_eq!(j, 0.813920, epsilon = 1e-6);

        // along the line of sight only the propagation term survives
        let u = unit_vectors(0.2).v * 2.0;
        assert_abs_diff_eq!(jacobian_factor(0.2, 4.0, u, 0.1, 9.0).unwrap(), 1.05, epsilon = 1e-12);
    }

    #[test]
    fn cone_examples() {
        let w = Vec2::new(0.0, 1.0);
        let c = cone_parameter(&[Vec2::new(0.0, 2.0), Vec2::new(0.0, -1.0)], &[w, w], None).unwrap();
        assert_eq!(c.c, CONE_C_MAX);

        let c = cone_parameter(&[Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)], &[w, w], None).unwrap();
        assert_eq!(c.c, 0.0);
        assert!(!c.satisfies_hypothesis());

        let along = |r: f64| Vec2::new((1.0 - r * r).sqrt(), r);
        let us = [along(0.9), along(0.6), along(0.8), Vec2::ZERO];
        let c = cone_parameter(&us, &[w; 4], None).unwrap();
        assert_abs_diff_eq!(c.c, 0.6, epsilon = 1e-12);
        assert_eq!(c.excluded_steps, 1);
        assert!(c.satisfies_hypothesis());
        let c = cone_parameter(&us, &[w; 4], Some(0.5)).unwrap();
        assert_abs_diff_eq!(c.min_margin, 0.1, epsilon = 1e-12);
        let c = cone_parameter(&us, &[w; 4], Some(0.7)).unwrap();
        assert!(!c.satisfies_hypothesis());

        assert!(cone_parameter(&[], &[], None).is_err());
        assert!(cone_parameter(&[Vec2::ZERO], &[w, w], None).is_err());
    }

    #[test]
    fn rate_examples() {
        assert_abs_diff_eq!(
            contraction_rate_estimate(&[1.0, 0.5, 0.25, 0.125]).unwrap(),
            0.5,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(contraction_rate_estimate(&[0.3; 6]).unwrap(), 1.0, epsilon = 1e-12);
        // the floor truncates the window
        let r = contraction_rate_estimate(&[1.0, 0.1, 0.01, 0.0, 5.0]).unwrap();
        assert_abs_diff_eq!(r, 0.1, epsilon = 1e-12);
        assert!(contraction_rate_estimate(&[1.0, 0.5]).is_err());
        assert!(contraction_rate_estimate(&[1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn diagnostics_from_trace() {
        let d = ContractionDiagnostics::from_trace(vec![0.2, -0.7, 0.5]).with_gap_trace(&[1.0, 0.5, 0.25]);
        assert_eq!(d.lambda_max, 0.7);
        assert_abs_diff_eq!(d.empirical_rate.unwrap(), 0.5, epsilon = 1e-12);
    }

    proptest! {
        // Existence: below the speed cap the interval is non-empty.
        #[test]
        fn bounds_are_ordered_below_the_speed_cap(range in 0.1..100.0f64, c in 0.01..0.99f64,
                                                   frac in 0.0..0.999f64, dt in 1e-3..1.0f64) {
            let step = frac * admissible_speed(c, range).unwrap();
            prop_assume!(step > 0.0);
            let b = gain_bounds(range, step / dt, dt, c).unwrap();
            prop_assert!(b.admissible && b.lower > 0.0 && b.upper > 0.0);
        }

        // For <u, w> < 0 the bounds rearranged from the negative-sign
        // Jacobian coincide with the |<u, w>| form.
        #[test]
        fn negative_sign_bounds_match_absolute_form(theta in -4.0..4.0f64, range in 0.5..50.0f64,
                                                    ux in -3.0..3.0f64, uy in -3.0..3.0f64,
                                                    dt in 1e-3..0.5f64) {
            let u = Vec2::new(ux, uy);
            let f = unit_vectors(theta);
            let (uv, uw) = (u.dot(f.v), u.dot(f.w));
            prop_assume!(uw < -1e-6);
            let y2 = range * range;
            let neg_upper = -uv / (2.0 * y2 * uw);
            let neg_lower = -(2.0 * range + dt * uv) / (2.0 * dt * y2 * uw);
            let b = instantaneous_bounds(theta, range, u, dt).unwrap().unwrap();
            prop_assert!((b.lower - neg_upper).abs() <= 1e-9 * (1.0 + neg_upper.abs()));
            prop_assert!((b.upper - neg_lower).abs() <= 1e-9 * (1.0 + neg_lower.abs()));
        }

        // The instantaneous interval characterizes |df/dtheta| < 1 exactly.
        #[test]
        fn instantaneous_bounds_characterize_contraction(theta in -4.0..4.0f64, range in 0.5..50.0f64,
                                                         ux in -3.0..3.0f64, uy in -3.0..3.0f64,
                                                         dt in 1e-3..0.5f64, g in 1e-4..50.0f64) {
            let u = Vec2::new(ux, uy);
            prop_assume!(u.dot(unit_vectors(theta).w).abs() > 1e-6);
            let b = instantaneous_bounds(theta, range, u, dt).unwrap().unwrap();
            let j = jacobian_factor(theta, range, u, dt, g).unwrap();
            let margin = 1e-9 * (1.0 + b.upper.abs() + b.lower.abs());
            if g > b.lower + margin && g < b.upper - margin {
                prop_assert!(j.abs() < 1.0);
            }
            if g < b.lower - margin || g > b.upper + margin {
                prop_assert!(j.abs() > 1.0);
            }
        }

        // Bounds evaluated with the measured range are the bounds at |l* - p|.
        #[test]
        fn measured_and_true_range_bounds_coincide(lx in -30.0..30.0f64, ly in -30.0..30.0f64,
                                                   px in -30.0..30.0f64, py in -30.0..30.0f64) {
            let (l, p) = (Vec2::new(lx, ly), Vec2::new(px, py));
            prop_assume!(l.distance(p) > 1e-3);
            let y = crate::plant::measure_range(l, p, &crate::plant::MeasurementModel::noiseless()).unwrap();
            prop_assert_eq!(gain_bounds(y, 0.7, 0.05, 0.3).unwrap(), gain_bounds((l - p).norm(), 0.7, 0.05, 0.3).unwrap());
        }
    }
}
