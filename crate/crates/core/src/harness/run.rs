//! The experiment loop: plant, range sensor, estimator and per-step
//! analysis, assembled into a [`RunReport`].

use rayon::prelude::*;

use crate::analysis::{admissible_speed, cone_ratio, gain_bounds, jacobian_factor, ContractionDiagnostics, GainBounds};
use crate::error::{Error, Result};
use crate::estimator::{adaptive_gain, estimate_landmark, estimator_step, EstimatorState, StepInputs};
use crate::geometry::{mirror_error_alpha, mirror_point, true_bearing, unit_vectors, wrap_angle, Vec2};
use crate::harness::output::CsvRow;
use crate::harness::scenario::{Criterion, GainSpec, LandmarkSpec, Scenario};
use crate::harness::stats::ErrorCurves;
use crate::plant::{input_sequence, small_angle_budget, step_plant, true_range, RangeSensor, TrajectoryPlan};

/// Landmark counts above this are updated on the rayon pool.
const PARALLEL_THRESHOLD: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub id: String,
    pub passed: bool,
    pub measured: f64,
    pub threshold: f64,
    pub detail: String,
}

/// Whole-run aggregates of the per-step analysis columns, over all
/// landmarks and steps.
#[derive(Debug, Clone, PartialEq)]
pub struct RunDiagnostics {
    pub lambda_max: f64,
    pub jacobian_exceed_steps: usize,
    pub in_bounds_steps: usize,
    pub landmark_steps: usize,
    pub min_cone_margin: f64,
    pub cone_violations: usize,
    pub max_small_angle_budget: f64,
}

impl Default for RunDiagnostics {
    fn default() -> Self {
        Self {
            lambda_max: 0.0,
            jacobian_exceed_steps: 0,
            in_bounds_steps: 0,
            landmark_steps: 0,
            min_cone_margin: f64::INFINITY,
            cone_violations: 0,
            max_small_angle_budget: 0.0,
        }
    }
}

impl RunDiagnostics {
    /// Fraction of landmark-steps whose gain sat strictly inside the
    /// per-step bounds evaluated with the measured range.
    pub fn admissible_fraction(&self) -> f64 {
        if self.landmark_steps == 0 {
            return 1.0;
        }
        self.in_bounds_steps as f64 / self.landmark_steps as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub steps: usize,
    pub sampling_time: f64,
    pub steps_per_lap: Option<f64>,
    pub cone_c: f64,
    pub landmarks: Vec<Vec2>,
    /// `p(0..=steps)`.
    pub trajectory: Vec<Vec2>,
    /// `u(0..steps)`.
    pub inputs: Vec<Vec2>,
    pub theta_init: Vec<f64>,
    /// State after the last update, radians, unwrapped.
    pub final_theta: Vec<f64>,
    /// Wrapped error at `k = steps`.
    pub final_errors: Vec<f64>,
    /// `l_i(steps)`.
    pub final_estimates: Vec<Vec2>,
    /// Long-format records, every `csv_stride`-th step.
    pub rows: Vec<CsvRow>,
    /// Error statistics for `k = 0..=steps`.
    pub curves: ErrorCurves,
    pub diagnostics: RunDiagnostics,
    pub converged: bool,
    pub laps_to_convergence: Option<f64>,
    pub verdicts: Vec<Verdict>,
}

impl RunReport {
    pub fn final_max_abs_error(&self) -> f64 {
        *self.curves.max.last().expect("at least one step")
    }

    pub fn final_mean_abs_error(&self) -> f64 {
        *self.curves.mean.last().expect("at least one step")
    }

    pub fn all_passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }

    pub fn verdict(&self, id: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.id == id)
    }

    /// Rows of one landmark, in step order.
    pub fn landmark_rows(&self, landmark: usize) -> impl Iterator<Item = &CsvRow> {
        self.rows.iter().filter(move |r| r.landmark_id == landmark)
    }

    /// Jacobian trace of one landmark from the recorded rows.
    pub fn contraction_diagnostics(&self, landmark: usize) -> ContractionDiagnostics {
        ContractionDiagnostics::from_trace(self.landmark_rows(landmark).map(|r| r.jacobian).collect())
    }
}

/// First index at which `curve` drops below `threshold`.
pub fn first_below(curve: &[f64], threshold: f64) -> Option<usize> {
    curve.iter().position(|&e| e < threshold)
}

/// First index from which `curve` stays below `threshold` to the end, if
/// that tail is at least `window` long.
pub fn sustained_below(curve: &[f64], threshold: f64, window: usize) -> Option<usize> {
    let start = curve.iter().rposition(|&e| !(e < threshold)).map_or(0, |j| j + 1);
    (curve.len() - start >= window.max(1)).then_some(start)
}

/// Largest value over the final `window` entries.
fn tail_max(curve: &[f64], window: usize) -> f64 {
    let from = curve.len().saturating_sub(window.max(1));
    curve[from..].iter().copied().fold(0.0, f64::max)
}

struct LandmarkStep {
    theta_next: f64,
    gain: f64,
    theta_true: f64,
    err: f64,
    beta: f64,
    jacobian: f64,
    bounds: GainBounds,
    cone_margin: f64,
    budget: f64,
    cone_violation: bool,
}

struct StepContext {
    p: Vec2,
    u: Vec2,
    u_norm: f64,
    dt: f64,
    cone_c: f64,
}

fn per_step_bounds(ctx: &StepContext, y: f64) -> Result<GainBounds> {
    if ctx.u_norm > 0.0 {
        gain_bounds(y, ctx.u_norm, ctx.dt, ctx.cone_c)
    } else {
        // |u| -> 0 limit: the upper bound grows without limit
        Ok(GainBounds {
            lower: 1.0 / (2.0 * ctx.cone_c * y * y),
            upper: f64::INFINITY,
            admissible: true,
        })
    }
}

fn landmark_step(
    ctx: &StepContext,
    landmark: Vec2,
    theta: f64,
    gain: f64,
    y_now: f64,
    y_next: f64,
) -> Result<LandmarkStep> {
    let state = EstimatorState::new(theta, gain)?;
    let (next, rec) = estimator_step(
        state,
        &StepInputs {
            y_now,
            y_next,
            p_now: ctx.p,
            u: ctx.u,
            dt: ctx.dt,
        },
    )?;
    let theta_true = true_bearing(landmark, ctx.p)?.radians();
    let w = unit_vectors(theta).w;
    Ok(LandmarkStep {
        theta_next: next.theta,
        gain,
        theta_true,
        err: wrap_angle(theta_true - theta),
        beta: rec.beta,
        jacobian: jacobian_factor(theta, y_now, ctx.u, ctx.dt, gain)?,
        bounds: per_step_bounds(ctx, y_now)?,
        cone_margin: cone_ratio(ctx.u, w).map_or(0.0, |r| r - ctx.cone_c),
        budget: small_angle_budget(ctx.u, y_now, ctx.dt),
        cone_violation: rec.cone_violation,
    })
}

fn measure_all(sensor: &mut RangeSensor, landmarks: &[Vec2], p: Vec2) -> Result<Vec<f64>> {
    landmarks.iter().map(|&l| sensor.measure(l, p)).collect()
}

/// Runs the plant/estimator loop described by `s`.
pub fn run_scenario(s: &Scenario) -> Result<RunReport> {
    s.validate()?;
    let dt = s.plant.sampling_time;
    let steps = s.steps();
    let landmarks = s.resolve_landmarks()?;
    let m = landmarks.len();
    let inputs = input_sequence(&s.plan, &s.plant, steps)?;
    let mut trajectory = Vec::with_capacity(steps + 1);
    trajectory.push(s.plan.start());
    for (k, &u) in inputs.iter().enumerate() {
        trajectory.push(step_plant(trajectory[k], u, dt));
    }

    let theta_init = s.resolve_theta_init();
    let fixed_gains = s.resolve_gains();
    let adaptive = matches!(s.gains, GainSpec::Adaptive);
    let mut gains = fixed_gains.unwrap_or_else(|| vec![1.0; m]);
    let mut thetas = theta_init.clone();

    let mut sensor = RangeSensor::new(&s.noise, s.noise_seed())?;
    let mut y_now = measure_all(&mut sensor, &landmarks, trajectory[0])?;

    let stride = s.output.csv_stride;
    let cone_c = s.analysis.cone_c;
    let mut rows = Vec::with_capacity((steps / stride + 1) * m);
    let mut curves = ErrorCurves::default();
    let mut diag = RunDiagnostics::default();

    for k in 0..steps {
        let u = inputs[k];
        let ctx = StepContext {
            p: trajectory[k],
            u,
            u_norm: u.norm(),
            dt,
            cone_c,
        };
        let y_next = measure_all(&mut sensor, &landmarks, trajectory[k + 1])?;
        if adaptive && ctx.u_norm > 0.0 {
            // at rest the update is the identity, so the previous gain is kept
            for (g, &y) in gains.iter_mut().zip(&y_now) {
                *g = adaptive_gain(y, ctx.u_norm, dt)?;
            }
        }

        let one = |i: usize| landmark_step(&ctx, landmarks[i], thetas[i], gains[i], y_now[i], y_next[i]);
        let results: Vec<LandmarkStep> = if m > PARALLEL_THRESHOLD {
            (0..m).into_par_iter().map(one).collect::<Result<_>>()?
        } else {
            (0..m).map(one).collect::<Result<_>>()?
        };

        let mut errors = Vec::with_capacity(m);
        for (i, r) in results.iter().enumerate() {
            if s.plant.strict_small_angle {
                if r.budget > s.plant.small_angle_cap {
                    return Err(Error::Abort {
                        step: k,
                        landmark: i,
                        reason: format!(
                            "small-angle budget {} exceeds cap {} (T={dt}, |u|={}, y={})",
                            r.budget, s.plant.small_angle_cap, ctx.u_norm, y_now[i]
                        ),
                    });
                }
                if r.cone_violation && ctx.u_norm > 0.0 {
                    return Err(Error::Abort {
                        step: k,
                        landmark: i,
                        reason: format!(
                            "input collinear with the estimated line of sight (theta={}, u={u})",
                            thetas[i]
                        ),
                    });
                }
            }
            diag.landmark_steps += 1;
            diag.lambda_max = diag.lambda_max.max(r.jacobian.abs());
            diag.jacobian_exceed_steps += usize::from(r.jacobian.abs() >= 1.0);
            diag.in_bounds_steps += usize::from(r.bounds.contains(r.gain));
            diag.min_cone_margin = diag.min_cone_margin.min(r.cone_margin);
            diag.cone_violations += usize::from(r.cone_violation);
            diag.max_small_angle_budget = diag.max_small_angle_budget.max(r.budget);
            errors.push(r.err);

            if k % stride == 0 {
                rows.push(CsvRow {
                    k,
                    t: k as f64 * dt,
                    landmark_id: i,
                    px: ctx.p.x,
                    py: ctx.p.y,
                    theta_est: thetas[i],
                    theta_true: r.theta_true,
                    err_wrapped: r.err,
                    range: y_now[i],
                    beta: r.beta,
                    jacobian: r.jacobian,
                    gain_lower: r.bounds.lower,
                    gain_upper: r.bounds.upper,
                    cone_margin: r.cone_margin,
                    small_angle_budget: r.budget,
                });
            }
        }
        curves.push_step(&errors);
        for (t, r) in thetas.iter_mut().zip(&results) {
            *t = r.theta_next;
        }
        y_now = y_next;
    }

    let p_final = trajectory[steps];
    let final_errors = landmarks
        .iter()
        .zip(&thetas)
        .map(|(&l, &t)| Ok(wrap_angle(true_bearing(l, p_final)?.radians() - t)))
        .collect::<Result<Vec<_>>>()?;
    curves.push_step(&final_errors);
    let final_estimates = thetas
        .iter()
        .zip(&y_now)
        .map(|(&t, &y)| estimate_landmark(&EstimatorState { theta: t, gain: 1.0 }, y, p_final))
        .collect();

    let window = s.convergence.window;
    let threshold = s.convergence.threshold;
    let steps_per_lap = s.steps_per_lap();
    let mut report = RunReport {
        scenario: s.name.clone(),
        seed: s.seed,
        steps,
        sampling_time: dt,
        steps_per_lap,
        cone_c,
        landmarks,
        trajectory,
        inputs,
        theta_init,
        final_theta: thetas,
        final_errors,
        final_estimates,
        rows,
        converged: curves.len() >= window && tail_max(&curves.max, window) < threshold,
        laps_to_convergence: steps_per_lap.and_then(|per| first_below(&curves.max, threshold).map(|k| k as f64 / per)),
        curves,
        diagnostics: diag,
        verdicts: Vec::new(),
    };
    report.verdicts = s
        .acceptance
        .iter()
        .map(|c| evaluate(c, s, &report))
        .collect::<Result<_>>()?;
    Ok(report)
}

fn evaluate(c: &Criterion, s: &Scenario, r: &RunReport) -> Result<Verdict> {
    let verdict = |id: &str, passed: bool, measured: f64, threshold: f64, detail: String| Verdict {
        id: id.to_string(),
        passed,
        measured,
        threshold,
        detail,
    };
    let d = &r.diagnostics;
    Ok(match c {
        Criterion::ConvergedFinal { id, threshold, window } => {
            let thr = threshold.unwrap_or(s.convergence.threshold);
            let win = window.unwrap_or(s.convergence.window);
            let measured = tail_max(&r.curves.max, win);
            let long_enough = r.curves.len() >= win;
            verdict(
                id,
                long_enough && measured < thr,
                measured,
                thr,
                format!("max |e| over final {win} steps"),
            )
        }
        Criterion::NotConvergedFinal { id, threshold, window } => {
            let thr = threshold.unwrap_or(s.convergence.threshold);
            let win = window.unwrap_or(s.convergence.window);
            let measured = tail_max(&r.curves.max, win);
            verdict(
                id,
                !(measured < thr),
                measured,
                thr,
                format!("max |e| over final {win} steps"),
            )
        }
        Criterion::JacobianExceeds { id, value } => verdict(
            id,
            d.lambda_max >= *value,
            d.lambda_max,
            *value,
            format!("{} steps at or above", d.jacobian_exceed_steps),
        ),
        Criterion::LambdaBelow { id, value } => verdict(
            id,
            d.lambda_max < *value,
            d.lambda_max,
            *value,
            "max |df/dtheta|".into(),
        ),
        Criterion::GainWithinBounds { id, expect } => {
            let f = d.admissible_fraction();
            let passed = if *expect { f == 1.0 } else { f < 1.0 };
            verdict(
                id,
                passed,
                f,
                1.0,
                format!("fraction of steps in bounds, expect all={expect}"),
            )
        }
        Criterion::MirrorConvergence {
            id,
            position_tol,
            alpha_tol,
        } => {
            let p = *r.trajectory.last().expect("non-empty trajectory");
            let u = *r.inputs.last().expect("at least one input");
            let mut worst_pos = 0.0f64;
            let mut worst_alpha = 0.0f64;
            for ((&l, est), &e) in r.landmarks.iter().zip(&r.final_estimates).zip(&r.final_errors) {
                let mirror = mirror_point(l, p, u)?;
                worst_pos = worst_pos.max(est.distance(mirror));
                // alpha is unsigned; the error carries the side of the axis
                let alpha = mirror_error_alpha(l, p, u)?.radians();
                let gap = wrap_angle(e - alpha).abs().min(wrap_angle(e + alpha).abs());
                worst_alpha = worst_alpha.max(gap);
            }
            verdict(
                id,
                worst_pos < *position_tol && worst_alpha < *alpha_tol,
                worst_pos,
                *position_tol,
                format!("|e - alpha| = {worst_alpha} (tol {alpha_tol})"),
            )
        }
        Criterion::ConvergedBeforeLaps { id, threshold, laps } => {
            let per = r.steps_per_lap.expect("validated periodic plan");
            let measured = first_below(&r.curves.max, *threshold).map_or(f64::INFINITY, |k| k as f64 / per);
            verdict(
                id,
                measured < *laps,
                measured,
                *laps,
                format!("laps until max |e| first drops below {threshold}"),
            )
        }
    })
}

/// Ring benchmark: many landmarks in an annulus around a closed ellipse.
pub fn run_ring_benchmark(s: &Scenario) -> Result<RunReport> {
    if !matches!(s.landmarks, LandmarkSpec::Ring { .. }) {
        return Err(Error::config("ring benchmark needs ring-sampled landmarks"));
    }
    if !matches!(s.plan, TrajectoryPlan::Ellipse { .. }) {
        return Err(Error::config("ring benchmark needs an ellipse plan"));
    }
    if s.run.laps.is_none() {
        return Err(Error::config("ring benchmark run length must be given in laps"));
    }
    run_scenario(s)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub gamma: f64,
    pub final_max_error: f64,
    pub lambda_max: f64,
    pub admissible_fraction: f64,
    pub converged: bool,
}

/// One run per gain on a single-landmark scenario, sorted by gain.
pub fn gain_sweep(s: &Scenario, gammas: &[f64]) -> Result<Vec<SweepRow>> {
    if gammas.is_empty() {
        return Err(Error::config("gain sweep needs at least one gain"));
    }
    if s.landmark_count() != 1 {
        return Err(Error::config("gain sweep needs a single-landmark scenario"));
    }
    let mut sorted = gammas.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted
        .par_iter()
        .map(|&gamma| {
            let mut run = s.clone();
            run.gains = GainSpec::Scalar { value: gamma };
            run.acceptance.clear();
            let mut quiet = run.output;
            quiet.csv_stride = run.steps() + 1;
            run.output = quiet;
            let r = run_scenario(&run)?;
            Ok(SweepRow {
                gamma,
                final_max_error: r.final_max_abs_error(),
                lambda_max: r.diagnostics.lambda_max,
                admissible_fraction: r.diagnostics.admissible_fraction(),
                converged: r.converged,
            })
        })
        .collect()
}

/// A priori gain check for one landmark along the planned trajectory, using
/// the true ranges.
#[derive(Debug, Clone, PartialEq)]
pub struct AprioriCheck {
    pub landmark: usize,
    pub min_range: f64,
    pub max_range: f64,
    /// Largest lower bound over the run.
    pub lower: f64,
    /// Smallest upper bound over the run.
    pub upper: f64,
    /// `max T |u(k)|`.
    pub max_step: f64,
    /// `2c/(1+c) min_range`.
    pub step_cap: f64,
    pub gain: Option<f64>,
}

impl AprioriCheck {
    /// Some gain satisfies every step's bounds.
    pub fn admissible(&self) -> bool {
        self.lower < self.upper
    }

    /// The existence condition on the step length holds.
    pub fn speed_ok(&self) -> bool {
        self.max_step < self.step_cap
    }

    pub fn gain_inside(&self) -> Option<bool> {
        self.gain.map(|g| g > self.lower && g < self.upper)
    }
}

pub fn apriori_gain_check(s: &Scenario) -> Result<Vec<AprioriCheck>> {
    s.validate()?;
    let dt = s.plant.sampling_time;
    let c = s.analysis.cone_c;
    let steps = s.steps();
    let landmarks = s.resolve_landmarks()?;
    let inputs = input_sequence(&s.plan, &s.plant, steps)?;
    let gains = s.resolve_gains();
    let mut out = Vec::with_capacity(landmarks.len());
    for (i, &l) in landmarks.iter().enumerate() {
        let mut p = s.plan.start();
        let mut chk = AprioriCheck {
            landmark: i,
            min_range: f64::INFINITY,
            max_range: 0.0,
            lower: 0.0,
            upper: f64::INFINITY,
            max_step: 0.0,
            step_cap: 0.0,
            gain: gains.as_ref().map(|g| g[i]),
        };
        for &u in &inputs {
            let y = true_range(l, p)?;
            chk.min_range = chk.min_range.min(y);
            chk.max_range = chk.max_range.max(y);
            chk.max_step = chk.max_step.max(dt * u.norm());
            if u.norm() > 0.0 {
                let b = gain_bounds(y, u.norm(), dt, c)?;
                chk.lower = chk.lower.max(b.lower);
                chk.upper = chk.upper.min(b.upper);
            } else {
                chk.lower = chk.lower.max(1.0 / (2.0 * c * y * y));
            }
            p = step_plant(p, u, dt);
        }
        chk.step_cap = admissible_speed(c, chk.min_range)?;
        out.push(chk);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sustained_below_finds_the_final_entry_point() {
        let c = [1.0, 0.5, 1e-4, 2e-3, 1e-4, 1e-5, 1e-6];
        assert_eq!(sustained_below(&c, 1e-3, 1), Some(4));
        assert_eq!(sustained_below(&c, 1e-3, 3), Some(4));
        assert_eq!(sustained_below(&c, 1e-3, 4), None);
        assert_eq!(sustained_below(&[1e-9; 4], 1e-3, 2), Some(0));
        assert_eq!(sustained_below(&[1.0, f64::NAN], 1e-3, 1), None);
    }

    #[test]
    fn first_below_is_the_first_hit() {
        assert_eq!(first_below(&[1.0, 1e-4, 2e-3, 1e-5], 1e-3), Some(1));
        assert_eq!(first_below(&[1.0, 2.0], 1e-3), None);
    }

    #[test]
    fn tail_max_covers_the_window() {
        let c = [5.0, 1.0, 2.0, 0.5];
        assert_eq!(tail_max(&c, 2), 2.0);
        assert_eq!(tail_max(&c, 10), 5.0);
    }
}
