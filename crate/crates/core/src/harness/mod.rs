//! Declarative scenarios, the experiment runner and its artifacts.

pub mod output;
pub mod presets;
pub mod run;
pub mod scenario;
pub mod stats;
pub mod svg;

pub use output::{emit_outputs, read_csv, CsvRow, CSV_HEADER};
pub use run::{
    apriori_gain_check, gain_sweep, run_ring_benchmark, run_scenario, AprioriCheck, RunDiagnostics, RunReport,
    SweepRow, Verdict,
};
pub use scenario::{Criterion, GainSpec, LandmarkSpec, Overrides, Scenario, ThetaInit};
pub use stats::{error_stats, ErrorCurves};
