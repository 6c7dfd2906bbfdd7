//! The range-only bearing estimator.
//!
//! Per landmark the state is a scalar bearing `theta` (kept unwrapped) and a
//! gain `gamma`. One update uses the range before the move `y(k)`, the range
//! after the move `y(k+1)`, the agent position and the velocity input:
//!
//! ```text
//! theta(k+1) = theta(k) + T/y(k) <u, w> + gamma sign(<u, w>) beta(k)
//! beta(k)    = y(k+1)^2 - |l(k) - p(k+1)|^2,   l(k) = y(k) v + p(k)
//! ```
//!
//! The first increment propagates the bearing along the known motion; `beta`
//! is the mismatch between the measured and the predicted next range and
//! pulls the estimate toward a bearing consistent with both ranges.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{unit_vectors, Vec2};
use crate::plant::step_plant;

/// `|<u, w>|` at or below this is treated as motion along the line of sight;
/// the correction is skipped for that step.
pub const CONE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorState {
    /// Bearing estimate in radians, unwrapped.
    pub theta: f64,
    /// Estimator gain, `> 0`.
    pub gain: f64,
}

impl EstimatorState {
    pub fn new(theta: f64, gain: f64) -> Result<Self> {
        if !theta.is_finite() {
            return Err(Error::domain("initial bearing must be finite"));
        }
        if !(gain > 0.0 && gain.is_finite()) {
            return Err(Error::domain(format!("gain must be finite and > 0, got {gain}")));
        }
        Ok(Self { theta, gain })
    }

    pub fn with_gain(self, gain: f64) -> Self {
        Self { gain, ..self }
    }
}

/// One entry per landmark, index-aligned with the landmark set.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MultiEstimatorState {
    pub entries: Vec<EstimatorState>,
}

impl MultiEstimatorState {
    pub fn new(entries: Vec<EstimatorState>) -> Self {
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInputs {
    /// Range at step `k`.
    pub y_now: f64,
    /// Range at step `k + 1`, measured after the move.
    pub y_next: f64,
    pub p_now: Vec2,
    pub u: Vec2,
    pub dt: f64,
}

/// Telemetry of one update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    /// Range mismatch, m^2.
    pub beta: f64,
    pub inner_uw: f64,
    pub inner_uv: f64,
    /// `sign(<u, w>)`, or 0 when the correction was skipped.
    pub sign_term: i8,
    pub predicted_term: f64,
    pub correction_term: f64,
    pub theta_next: f64,
    pub cone_violation: bool,
    pub gain: f64,
}

/// Landmark position implied by the current bearing and range.
pub fn estimate_landmark(state: &EstimatorState, y_now: f64, p_now: Vec2) -> Vec2 {
    Vec2::from_angle(state.theta) * y_now + p_now
}

pub fn correction_beta(y_next: f64, l_est: Vec2, p_next: Vec2) -> f64 {
    y_next * y_next - (l_est - p_next).norm_squared()
}

fn check_inputs(i: &StepInputs) -> Result<()> {
    let all_finite =
        i.y_now.is_finite() && i.y_next.is_finite() && i.dt.is_finite() && i.p_now.is_finite() && i.u.is_finite();
    if !all_finite {
        return Err(Error::domain("non-finite estimator input"));
    }
    if !(i.y_now > 0.0) {
        return Err(Error::domain(format!("y_now must be > 0, got {}", i.y_now)));
    }
    if i.y_next < 0.0 {
        return Err(Error::domain(format!("y_next must be >= 0, got {}", i.y_next)));
    }
    if !(i.dt > 0.0) {
        return Err(Error::domain("sampling time must be > 0"));
    }
    Ok(())
}

pub fn estimator_step(state: EstimatorState, inputs: &StepInputs) -> Result<(EstimatorState, StepRecord)> {
    check_inputs(inputs)?;
    if !state.theta.is_finite() {
        return Err(Error::domain("bearing state is not finite"));
    }
    let StepInputs {
        y_now,
        y_next,
        p_now,
        u,
        dt,
    } = *inputs;

    let frame = unit_vectors(state.theta);
    let inner_uw = u.dot(frame.w);
    let inner_uv = u.dot(frame.v);
    let predicted_term = dt / y_now * inner_uw;

    let l_est = estimate_landmark(&state, y_now, p_now);
    let beta = correction_beta(y_next, l_est, step_plant(p_now, u, dt));

    let cone_violation = inner_uw.abs() <= CONE_EPS;
    let sign_term: i8 = if cone_violation {
        0
    } else if inner_uw > 0.0 {
        1
    } else {
        -1
    };
    let correction_term = state.gain * f64::from(sign_term) * beta;
    let theta_next = state.theta + predicted_term + correction_term;

    let record = StepRecord {
        beta,
        inner_uw,
        inner_uv,
        sign_term,
        predicted_term,
        correction_term,
        theta_next,
        cone_violation,
        gain: state.gain,
    };
    Ok((
        EstimatorState {
            theta: theta_next,
            gain: state.gain,
        },
        record,
    ))
}

/// Gain that zeroes the Jacobian factor when the agent moves orthogonally to
/// the estimated line of sight: `1 / (2 T y |u|)`.
pub fn adaptive_gain(y_now: f64, u_norm: f64, dt: f64) -> Result<f64> {
    if !(y_now > 0.0 && u_norm > 0.0 && dt > 0.0) {
        return Err(Error::domain(format!(
            "adaptive gain needs positive range, speed and sampling time (y={y_now}, |u|={u_norm}, T={dt})"
        )));
    }
    Ok(1.0 / (2.0 * dt * y_now * u_norm))
}

/// Agent-side quantities shared by every landmark in one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SharedStep {
    pub p_now: Vec2,
    pub u: Vec2,
    pub dt: f64,
}

impl SharedStep {
    fn inputs(&self, (y_now, y_next): (f64, f64)) -> StepInputs {
        StepInputs {
            y_now,
            y_next,
            p_now: self.p_now,
            u: self.u,
            dt: self.dt,
        }
    }
}

fn check_lengths(states: &MultiEstimatorState, ranges: &[(f64, f64)]) -> Result<()> {
    if states.len() != ranges.len() {
        return Err(Error::domain(format!(
            "{} estimator entries but {} range pairs",
            states.len(),
            ranges.len()
        )));
    }
    Ok(())
}

/// Independent update of every landmark's estimator; `ranges[i]` is
/// `(y_i(k), y_i(k+1))`.
pub fn multi_step(
    states: &MultiEstimatorState,
    shared: SharedStep,
    ranges: &[(f64, f64)],
) -> Result<(MultiEstimatorState, Vec<StepRecord>)> {
    check_lengths(states, ranges)?;
    let (entries, records) = states
        .entries
        .iter()
        .zip(ranges)
        .map(|(s, &r)| estimator_step(*s, &shared.inputs(r)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    Ok((MultiEstimatorState { entries }, records))
}

/// Same as [`multi_step`], landmarks updated on the rayon pool.
pub fn multi_step_par(
    states: &MultiEstimatorState,
    shared: SharedStep,
    ranges: &[(f64, f64)],
) -> Result<(MultiEstimatorState, Vec<StepRecord>)> {
    check_lengths(states, ranges)?;
    let (entries, records) = states
        .entries
        .par_iter()
        .zip(ranges.par_iter())
        .map(|(s, &r)| estimator_step(*s, &shared.inputs(r)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    Ok((MultiEstimatorState { entries }, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{true_bearing, wrap_angle};
    use crate::plant::true_range;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn inputs_for(l: Vec2, p: Vec2, u: Vec2, dt: f64) -> StepInputs {
        StepInputs {
            y_now: true_range(l, p).unwrap(),
            y_next: true_range(l, step_plant(p, u, dt)).unwrap(),
            p_now: p,
            u,
            dt,
        }
    }

    #[test]
    fn landmark_reconstruction_examples() {
        let s = |t| EstimatorState::new(t, 1.0).unwrap();
        assert_eq!(estimate_landmark(&s(0.0), 2.0, Vec2::ZERO), Vec2::new(2.0, 0.0));
        let l = estimate_landmark(&s(FRAC_PI_2), 1.0, Vec2::new(1.0, 1.0));
        assert_abs_diff_eq!(l.x, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(l.y, 2.0, epsilon = 1e-15);
        let l = estimate_landmark(&s(0.2), 2.0, Vec2::ZERO);
        assert_abs_diff_eq!(l.x, 1.960133, epsilon = 1e-6);
        assert_abs_diff_eq!(l.y, 0.397339, epsilon = 1e-6);
    }

    #[test]
    fn beta_examples() {
        let l_star = Vec2::new(0.0, 2.0);
        let p_next = Vec2::new(1.0, 0.0);
        let y_next = true_range(l_star, p_next).unwrap();
        assert_abs_diff_eq!(correction_beta(y_next, l_star, p_next), 0.0, epsilon = 1e-12);
        // the mirror across the motion axis predicts the same next range
        assert_abs_diff_eq!(
            correction_beta(y_next, Vec2::new(0.0, -2.0), p_next),
            0.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            correction_beta(y_next, Vec2::new(2.0, 0.0), p_next),
            4.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn zero_motion_leaves_the_state_alone() {
        let s = EstimatorState::new(1.3, 4.0).unwrap();
        let (next, rec) = estimator_step(s, &inputs_for(Vec2::new(3.0, 1.0), Vec2::ZERO, Vec2::ZERO, 0.1)).unwrap();
        assert_eq!(next.theta, s.theta);
        assert_eq!(rec.predicted_term, 0.0);
        assert_eq!(rec.beta, 0.0);
        assert!(rec.cone_violation);
        assert_eq!(rec.sign_term, 0);
    }

    #[test]
    fn hand_evaluated_step() {
        let l_star = Vec2::new(2.0, 0.0);
        let inputs = inputs_for(l_star, Vec2::ZERO, Vec2::new(0.0, 1.0), 0.1);
        assert_abs_diff_eq!(inputs.y_next, 4.01f64.sqrt(), epsilon = 1e-15);
        let s = EstimatorState::new(0.2, 0.5).unwrap();
        let (next, rec) = estimator_step(s, &inputs).unwrap();
        assert_abs_diff_eq!(rec.predicted_term, -0.0490034, epsilon = 1e-7);
        assert_abs_diff_eq!(rec.beta, 0.079468, epsilon = 1e-6);
        assert_eq!(rec.sign_term, -1);
        assert_abs_diff_eq!(rec.correction_term, -0.0397339, epsilon = 1e-7);
        // 0.2 - 0.05 cos 0.2 - 0.2 sin 0.2
        assert_abs_diff_eq!(next.theta, 0.1112628, epsilon = 1e-7);
        assert_eq!(rec.theta_next, s.theta + rec.predicted_term + rec.correction_term);
        assert_eq!(next.gain, s.gain);

        let e_after = wrap_angle(true_bearing(l_star, Vec2::new(0.0, 0.1)).unwrap().radians() - next.theta);
        assert_abs_diff_eq!(e_after.abs(), 0.16122, epsilon = 1e-5);
        assert!(e_after.abs() < 0.2);
    }

    #[test]
    fn exact_estimate_follows_the_steady_state_recursion() {
        let l_star = Vec2::new(3.0, 4.0);
        let p = Vec2::new(-1.0, 0.5);
        let u = Vec2::new(0.7, -0.4);
        let dt = 0.02;
        let inputs = inputs_for(l_star, p, u, dt);
        let theta_star = true_bearing(l_star, p).unwrap().radians();
        let (next, rec) = estimator_step(EstimatorState::new(theta_star, 3.0).unwrap(), &inputs).unwrap();

        assert!(rec.beta.abs() < 1e-9 * inputs.y_now.powi(2));
        let steady = theta_star + dt / inputs.y_now * u.dot(unit_vectors(theta_star).w);
        assert_abs_diff_eq!(next.theta, steady, epsilon = 1e-12);

        let budget = dt * u.norm() / inputs.y_now;
        let after = true_bearing(l_star, step_plant(p, u, dt)).unwrap().radians();
        // second-order remainder, plus third-order slack
        assert!(wrap_angle(after - next.theta).abs() <= 0.5 * budget * budget + budget.powi(3));
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let s = EstimatorState::new(0.0, 1.0).unwrap();
        let good = inputs_for(Vec2::new(1.0, 1.0), Vec2::ZERO, Vec2::new(1.0, 0.0), 0.1);
        let bad = [
            StepInputs { y_now: 0.0, ..good },
            StepInputs { y_now: -1.0, ..good },
            StepInputs {
                y_next: f64::NAN,
                ..good
            },
            StepInputs {
                u: Vec2::new(f64::NAN, 0.0),
                ..good
            },
            StepInputs { dt: 0.0, ..good },
        ];
        for i in &bad {
            assert!(matches!(estimator_step(s, i), Err(Error::Domain(_))), "{i:?}");
        }
        assert!(EstimatorState::new(0.0, 0.0).is_err());
        assert!(EstimatorState::new(f64::INFINITY, 1.0).is_err());
    }

    #[test]
    fn adaptive_gain_examples() {
        assert_abs_diff_eq!(adaptive_gain(10.0, 1.0, 0.1).unwrap(), 0.5, epsilon = 1e-15);
        let g = adaptive_gain(3.0, 0.4, 0.05).unwrap();
        assert_abs_diff_eq!(adaptive_gain(6.0, 0.4, 0.05).unwrap(), g / 2.0, epsilon = 1e-15);
        assert!(adaptive_gain(0.0, 1.0, 0.1).is_err());
        assert!(adaptive_gain(1.0, 0.0, 0.1).is_err());
        assert!(adaptive_gain(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn multi_step_with_one_landmark_matches_single_step() {
        let l = Vec2::new(2.0, 5.0);
        let i = inputs_for(l, Vec2::ZERO, Vec2::new(0.3, 0.1), 0.1);
        let s = EstimatorState::new(-0.4, 2.0).unwrap();
        let (single, rec) = estimator_step(s, &i).unwrap();
        let shared = SharedStep {
            p_now: i.p_now,
            u: i.u,
            dt: i.dt,
        };
        let (multi, recs) = multi_step(&MultiEstimatorState::new(vec![s]), shared, &[(i.y_now, i.y_next)]).unwrap();
        assert_eq!(multi.entries, vec![single]);
        assert_eq!(recs, vec![rec]);
    }

    #[test]
    fn multi_step_rejects_length_mismatch() {
        let states = MultiEstimatorState::new(vec![EstimatorState::new(0.0, 1.0).unwrap(); 2]);
        let shared = SharedStep {
            p_now: Vec2::ZERO,
            u: Vec2::new(1.0, 0.0),
            dt: 0.1,
        };
        assert!(multi_step(&states, shared, &[(1.0, 1.0)]).is_err());
        assert!(multi_step_par(&states, shared, &[(1.0, 1.0)]).is_err());
    }

    #[test]
    fn serial_and_parallel_updates_agree_on_a_ring() {
        let landmarks = crate::plant::landmark_ring_sampler(Vec2::ZERO, 10.0, 25.0, 1000, 5).unwrap();
        let mut serial = MultiEstimatorState::new(
            (0..1000)
                .map(|i| EstimatorState::new(-3.0 + 0.006 * i as f64, 5.0).unwrap())
                .collect(),
        );
        let mut parallel = serial.clone();
        let dt = 0.01;
        let mut p = Vec2::new(4.0, 0.0);
        for k in 0..50 {
            let u = Vec2::from_angle(FRAC_PI_2 + 0.01 * k as f64) * 0.5;
            let p_next = step_plant(p, u, dt);
            let ranges: Vec<_> = landmarks
                .iter()
                .map(|&l| (true_range(l, p).unwrap(), true_range(l, p_next).unwrap()))
                .collect();
            let shared = SharedStep { p_now: p, u, dt };
            let (s, rs) = multi_step(&serial, shared, &ranges).unwrap();
            let (q, rq) = multi_step_par(&parallel, shared, &ranges).unwrap();
            assert_eq!(rs, rq);
            serial = s;
            parallel = q;
            p = p_next;
        }
        assert_eq!(serial, parallel);
    }

    // Oracle for the range mismatch written with the true landmark:
    // |l* - p - T u|^2 - |y v - T u|^2.
    fn beta_from_truth(l_star: Vec2, p: Vec2, u: Vec2, dt: f64, theta: f64) -> f64 {
        let y = (l_star - p).norm();
        let a = l_star - p - u * dt;
        let b = Vec2::from_angle(theta) * y - u * dt;
        a.norm_squared() - b.norm_squared()
    }

    proptest! {
        #[test]
        fn beta_forms_agree(lx in -50.0..50.0f64, ly in -50.0..50.0f64, px in -50.0..50.0f64,
                            py in -50.0..50.0f64, ux in -3.0..3.0f64, uy in -3.0..3.0f64,
                            dt in 1e-3..0.5f64, theta in -10.0..10.0f64) {
            let l_star = Vec2::new(lx, ly);
            let p = Vec2::new(px, py);
            prop_assume!(l_star.distance(p) > 1e-3);
            let u = Vec2::new(ux, uy);
            let i = inputs_for(l_star, p, u, dt);
            let s = EstimatorState::new(theta, 1.0).unwrap();
            let direct = correction_beta(i.y_next, estimate_landmark(&s, i.y_now, p), step_plant(p, u, dt));
            let oracle = beta_from_truth(l_star, p, u, dt, theta);
            prop_assert!((direct - oracle).abs() <= 1e-9 * i.y_now.powi(2).max(1.0));
        }

        #[test]
        fn zero_error_gives_zero_mismatch(lx in -50.0..50.0f64, ly in -50.0..50.0f64,
                                          ux in -3.0..3.0f64, uy in -3.0..3.0f64, dt in 1e-3..0.5f64) {
            let l_star = Vec2::new(lx, ly);
            prop_assume!(l_star.norm() > 1e-2);
            let i = inputs_for(l_star, Vec2::ZERO, Vec2::new(ux, uy), dt);
            let theta = true_bearing(l_star, Vec2::ZERO).unwrap().radians();
            let (_, rec) = estimator_step(EstimatorState::new(theta, 1.0).unwrap(), &i).unwrap();
            prop_assert!(rec.beta.abs() <= 1e-9 * i.y_now.powi(2));
        }

        #[test]
        fn landmarks_update_independently(thetas in proptest::collection::vec(-3.0..3.0f64, 2..8),
                                          shift in 0usize..8) {
            let n = thetas.len();
            let landmarks: Vec<Vec2> = (0..n).map(|i| Vec2::new(5.0 + i as f64, 3.0 - i as f64)).collect();
            let p = Vec2::new(0.5, -0.5);
            let u = Vec2::new(0.2, 0.9);
            let dt = 0.05;
            let ranges: Vec<_> = landmarks.iter()
                .map(|&l| (true_range(l, p).unwrap(), true_range(l, step_plant(p, u, dt)).unwrap()))
                .collect();
            let states = MultiEstimatorState::new(thetas.iter().map(|&t| EstimatorState::new(t, 0.7).unwrap()).collect());
            let shared = SharedStep { p_now: p, u, dt };
            let (out, _) = multi_step(&states, shared, &ranges).unwrap();

            let k = shift % n;
            let mut rs = ranges.clone();
            rs.rotate_left(k);
            let mut es = states.entries.clone();
            es.rotate_left(k);
            let (permuted, _) = multi_step(&MultiEstimatorState::new(es), shared, &rs).unwrap();
            let mut expected = out.entries.clone();
            expected.rotate_left(k);
            prop_assert_eq!(permuted.entries, expected);
        }
    }
}
