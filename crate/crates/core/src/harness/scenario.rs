//! Declarative experiment description, stored as TOML.
//!
//! ```toml
//! schema_version = 1
//! name = "curved_gamma10"
//! seed = 7
//!
//! [plant]
//! sampling_time = 0.01
//!
//! [plan]
//! kind = "arc"
//! center = [0.0, 0.0]
//! radius = 5.0
//! angular_rate = 0.2
//!
//! [landmarks]
//! kind = "explicit"
//! points = [[0.0, 0.0]]
//!
//! [gains]
//! kind = "scalar"
//! value = 10.0
//!
//! [theta_init]
//! kind = "explicit"
//! values = [-60.0]
//! units = "deg"
//!
//! [run]
//! steps = 3000
//!
//! [[acceptance]]
//! kind = "converged_final"
//! id = "converges"
//! ```

use std::collections::HashSet;
use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::plant::{landmark_ring_sampler, MeasurementModel, PlantConfig, TrajectoryPlan};

pub const SCHEMA_VERSION: u32 = 1;

pub const DEFAULT_CONVERGENCE_THRESHOLD: f64 = 1e-3;
pub const DEFAULT_CONVERGENCE_WINDOW: usize = 50;
pub const DEFAULT_CONE_C: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    /// Master seed for landmark sampling, random initialization and noise.
    #[serde(default)]
    pub seed: u64,
    pub plant: PlantConfig,
    pub plan: TrajectoryPlan,
    pub landmarks: LandmarkSpec,
    pub gains: GainSpec,
    pub theta_init: ThetaInit,
    pub run: RunLength,
    #[serde(default)]
    pub noise: MeasurementModel,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub convergence: ConvergenceConfig,
    #[serde(default)]
    pub acceptance: Vec<Criterion>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LandmarkSpec {
    Explicit {
        points: Vec<Vec2>,
    },
    Ring {
        #[serde(default)]
        center: Vec2,
        inner: f64,
        outer: f64,
        count: usize,
        /// Defaults to the scenario seed.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GainSpec {
    Scalar {
        value: f64,
    },
    PerLandmark {
        values: Vec<f64>,
    },
    /// `gamma(k) = 1 / (2 T y(k) |u(k)|)`, recomputed every step.
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngleUnit {
    #[default]
    Rad,
    Deg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ThetaInit {
    /// Uniform in `[-pi, pi]` per landmark.
    Random {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Explicit {
        values: Vec<f64>,
        #[serde(default)]
        units: AngleUnit,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunLength {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    /// Run length in laps of a periodic plan.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub laps: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Cone parameter `c` used for the per-step gain bounds and margins.
    pub cone_c: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self { cone_c: DEFAULT_CONE_C }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceConfig {
    /// Wrapped `|e|` below this counts as converged (rad).
    pub threshold: f64,
    /// Consecutive steps the error must stay below the threshold.
    pub window: usize,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_CONVERGENCE_THRESHOLD,
            window: DEFAULT_CONVERGENCE_WINDOW,
        }
    }
}

/// A pass/fail check evaluated on the finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Criterion {
    /// Max wrapped `|e_i|` stays below `threshold` over the final `window` steps.
    ConvergedFinal {
        id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        threshold: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        window: Option<usize>,
    },
    /// The negation of `converged_final`.
    NotConvergedFinal {
        id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        threshold: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        window: Option<usize>,
    },
    /// Some step has `|df/dtheta| >= value`.
    JacobianExceeds { id: String, value: f64 },
    /// Every step has `|df/dtheta| < value`.
    LambdaBelow { id: String, value: f64 },
    /// `expect = true`: the gain sits inside the per-step bounds at every
    /// step; `false`: it leaves them at least once.
    GainWithinBounds { id: String, expect: bool },
    /// Final estimate sits on the mirror landmark and the error on alpha.
    MirrorConvergence {
        id: String,
        position_tol: f64,
        alpha_tol: f64,
    },
    /// Max wrapped `|e_i|` drops below `threshold` for good before `laps`.
    ConvergedBeforeLaps { id: String, threshold: f64, laps: f64 },
}

impl Criterion {
    pub fn id(&self) -> &str {
        match self {
            Criterion::ConvergedFinal { id, .. }
            | Criterion::NotConvergedFinal { id, .. }
            | Criterion::JacobianExceeds { id, .. }
            | Criterion::LambdaBelow { id, .. }
            | Criterion::GainWithinBounds { id, .. }
            | Criterion::MirrorConvergence { id, .. }
            | Criterion::ConvergedBeforeLaps { id, .. } => id,
        }
    }
}

fn yes() -> bool {
    true
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "yes")]
    pub csv: bool,
    #[serde(default = "yes")]
    pub summary: bool,
    #[serde(default)]
    pub svg: bool,
    /// Emit CSV rows only for every `csv_stride`-th step.
    #[serde(default = "one")]
    pub csv_stride: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            csv: true,
            summary: true,
            svg: false,
            csv_stride: 1,
        }
    }
}

/// Command-line overrides applied on top of a loaded scenario.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub steps: Option<usize>,
    pub laps: Option<f64>,
    pub strict: bool,
}

/// Mixes a stream tag into the master seed (splitmix64 finalizer).
pub(crate) fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const THETA_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::config(format!("scenario parse: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("scenario serialize: {e}")))
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if o.steps.is_some() && o.laps.is_some() {
            return Err(Error::config("--steps and --laps are mutually exclusive"));
        }
        if let Some(steps) = o.steps {
            self.run = RunLength {
                steps: Some(steps),
                laps: None,
            };
        }
        if let Some(laps) = o.laps {
            self.run = RunLength {
                steps: None,
                laps: Some(laps),
            };
        }
        if o.strict {
            self.plant.strict_small_angle = true;
        }
        self.validate()
    }

    pub fn landmark_count(&self) -> usize {
        match &self.landmarks {
            LandmarkSpec::Explicit { points } => points.len(),
            LandmarkSpec::Ring { count, .. } => *count,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.name.trim().is_empty() {
            return Err(Error::config("scenario name must not be empty"));
        }
        if self.name.contains(['/', '\\']) {
            return Err(Error::config("scenario name must not contain path separators"));
        }
        self.plant.validate()?;
        self.plan.validate()?;
        self.noise.validate()?;

        let m = self.landmark_count();
        match &self.landmarks {
            LandmarkSpec::Explicit { points } => {
                if points.is_empty() {
                    return Err(Error::config("landmark list must not be empty"));
                }
                if points.iter().any(|p| !p.is_finite()) {
                    return Err(Error::config("landmark coordinates must be finite"));
                }
            }
            LandmarkSpec::Ring {
                center,
                inner,
                outer,
                count,
                ..
            } => {
                if !center.is_finite() || !(*inner > 0.0 && inner < outer && outer.is_finite()) {
                    return Err(Error::config("ring landmarks need finite 0 < inner < outer"));
                }
                if *count == 0 {
                    return Err(Error::config("ring landmark count must be >= 1"));
                }
            }
        }
        match &self.gains {
            GainSpec::Scalar { value } => check_gain(*value)?,
            GainSpec::PerLandmark { values } => {
                if values.len() != m {
                    return Err(Error::config(format!("{} gains given for {m} landmarks", values.len())));
                }
                values.iter().try_for_each(|&g| check_gain(g))?;
            }
            GainSpec::Adaptive => {}
        }
        if let ThetaInit::Explicit { values, .. } = &self.theta_init {
            if values.len() != m {
                return Err(Error::config(format!(
                    "{} initial bearings given for {m} landmarks",
                    values.len()
                )));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::config("initial bearings must be finite"));
            }
        }
        match (self.run.steps, self.run.laps) {
            (Some(0), None) => return Err(Error::config("steps must be >= 1")),
            (Some(_), None) => {}
            (None, Some(laps)) => {
                if !(laps > 0.0 && laps.is_finite()) {
                    return Err(Error::config("laps must be finite and > 0"));
                }
                if self.plan.steps_per_lap(self.plant.sampling_time).is_none() {
                    return Err(Error::config("laps requires a periodic (arc or ellipse) plan"));
                }
            }
            _ => return Err(Error::config("exactly one of run.steps and run.laps must be set")),
        }
        let c = self.analysis.cone_c;
        if !(c > 0.0 && c < 1.0) {
            return Err(Error::config(format!("analysis.cone_c must lie in (0, 1), got {c}")));
        }
        if !(self.convergence.threshold > 0.0) || self.convergence.window == 0 {
            return Err(Error::config("convergence needs threshold > 0 and window >= 1"));
        }
        if self.output.csv_stride == 0 {
            return Err(Error::config("output.csv_stride must be >= 1"));
        }
        let mut ids = HashSet::new();
        for c in &self.acceptance {
            if !ids.insert(c.id()) {
                return Err(Error::config(format!("duplicate acceptance id '{}'", c.id())));
            }
            if let Criterion::ConvergedBeforeLaps { .. } = c {
                if self.plan.steps_per_lap(self.plant.sampling_time).is_none() {
                    return Err(Error::config(format!("criterion '{}' needs a periodic plan", c.id())));
                }
            }
        }
        Ok(())
    }

    /// Total number of estimator updates.
    pub fn steps(&self) -> usize {
        match (self.run.steps, self.run.laps) {
            (Some(n), _) => n,
            (None, Some(laps)) => {
                let per_lap = self
                    .plan
                    .steps_per_lap(self.plant.sampling_time)
                    .expect("validated periodic plan");
                ((laps * per_lap).round() as usize).max(1)
            }
            (None, None) => unreachable!("validated run length"),
        }
    }

    pub fn steps_per_lap(&self) -> Option<f64> {
        self.plan.steps_per_lap(self.plant.sampling_time)
    }

    pub fn resolve_landmarks(&self) -> Result<Vec<Vec2>> {
        match &self.landmarks {
            LandmarkSpec::Explicit { points } => Ok(points.clone()),
            LandmarkSpec::Ring {
                center,
                inner,
                outer,
                count,
                seed,
            } => landmark_ring_sampler(*center, *inner, *outer, *count, seed.unwrap_or(self.seed)),
        }
    }

    /// Initial bearings in radians.
    pub fn resolve_theta_init(&self) -> Vec<f64> {
        let m = self.landmark_count();
        match &self.theta_init {
            ThetaInit::Random { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or_else(|| derive_seed(self.seed, THETA_STREAM)));
                (0..m).map(|_| rng.random_range(-PI..=PI)).collect()
            }
            ThetaInit::Explicit { values, units } => values
                .iter()
                .map(|&v| match units {
                    AngleUnit::Rad => v,
                    AngleUnit::Deg => v.to_radians(),
                })
                .collect(),
        }
    }

    /// Fixed gains per landmark, or `None` in adaptive mode.
    pub fn resolve_gains(&self) -> Option<Vec<f64>> {
        let m = self.landmark_count();
        match &self.gains {
            GainSpec::Scalar { value } => Some(vec![*value; m]),
            GainSpec::PerLandmark { values } => Some(values.clone()),
            GainSpec::Adaptive => None,
        }
    }

    pub(crate) fn noise_seed(&self) -> u64 {
        derive_seed(self.seed, NOISE_STREAM)
    }
}

fn check_gain(g: f64) -> Result<()> {
    if g > 0.0 && g.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("gains must be finite and > 0, got {g}")))
    }
}
