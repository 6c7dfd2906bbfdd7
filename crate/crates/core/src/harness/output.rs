//! Run artifacts: the long-format CSV, the key/value run summary and the
//! SVG figures.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::run::RunReport;
use crate::harness::scenario::OutputConfig;
use crate::harness::svg;

/// Column contract of the long-format CSV.
pub const CSV_HEADER: &str = "k,t,landmark_id,px,py,theta_est,theta_true,err_wrapped,range,beta,jacobian,gain_lower,gain_upper,cone_margin,small_angle_budget";

/// One landmark at one step. Field order is the CSV column order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub k: usize,
    pub t: f64,
    pub landmark_id: usize,
    pub px: f64,
    pub py: f64,
    pub theta_est: f64,
    pub theta_true: f64,
    pub err_wrapped: f64,
    pub range: f64,
    pub beta: f64,
    pub jacobian: f64,
    pub gain_lower: f64,
    pub gain_upper: f64,
    pub cone_margin: f64,
    pub small_angle_budget: f64,
}

pub fn write_csv_to<W: std::io::Write>(rows: &[CsvRow], out: W) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(CSV_HEADER.split(','))?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn csv_bytes(rows: &[CsvRow]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_csv_to(rows, &mut buf).expect("writing to memory");
    buf
}

pub fn write_csv(rows: &[CsvRow], path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv_to(rows, std::io::BufWriter::new(file)).map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_csv(path: &Path) -> Result<Vec<CsvRow>> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.iter().collect::<Vec<_>>().join(",");
    if header != CSV_HEADER {
        return Err(Error::config(format!(
            "{}: unexpected CSV header '{header}'",
            path.display()
        )));
    }
    r.deserialize()
        .collect::<std::result::Result<Vec<CsvRow>, _>>()
        .map_err(csv_err)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |x| x.to_string())
}

/// `key: value` run summary with stable key names.
pub fn summary_text(report: &RunReport) -> String {
    let d = &report.diagnostics;
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k}: {v}");
    };
    kv("scenario", report.scenario.clone());
    kv("seed", report.seed.to_string());
    kv("steps", report.steps.to_string());
    kv("sampling_time", report.sampling_time.to_string());
    kv("steps_per_lap", opt(report.steps_per_lap));
    kv("landmarks", report.landmarks.len().to_string());
    kv("cone_c", report.cone_c.to_string());
    kv("final_max_abs_error", report.final_max_abs_error().to_string());
    kv("final_mean_abs_error", report.final_mean_abs_error().to_string());
    kv("converged", report.converged.to_string());
    kv("laps_to_convergence", opt(report.laps_to_convergence));
    kv("lambda_max", d.lambda_max.to_string());
    kv("jacobian_exceed_steps", d.jacobian_exceed_steps.to_string());
    kv("admissible_fraction", d.admissible_fraction().to_string());
    kv("min_cone_margin", d.min_cone_margin.to_string());
    kv("cone_violations", d.cone_violations.to_string());
    kv("max_small_angle_budget", d.max_small_angle_budget.to_string());
    kv("error_band", "percentile_2.5_97.5".to_string());
    kv("bounds_online", "measured_range".to_string());
    for v in &report.verdicts {
        kv(
            &format!("verdict.{}", v.id),
            format!(
                "{} measured={} threshold={}{}",
                if v.passed { "pass" } else { "fail" },
                v.measured,
                v.threshold,
                if v.detail.is_empty() {
                    String::new()
                } else {
                    format!(" ({})", v.detail)
                }
            ),
        );
    }
    let passed = report.verdicts.iter().filter(|v| v.passed).count();
    kv("verdicts_passed", format!("{passed}/{}", report.verdicts.len()));
    s
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes the artifacts selected by `config` into `out_dir`; returns the
/// written paths.
pub fn emit_outputs(report: &RunReport, config: &OutputConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    if config.csv {
        let path = out_dir.join(format!("{}.csv", report.scenario));
        write_csv(&report.rows, &path)?;
        written.push(path);
    }
    if config.summary {
        let path = out_dir.join(format!("{}.summary.txt", report.scenario));
        write_file(&path, summary_text(report).as_bytes())?;
        written.push(path);
    }
    if config.svg {
        let path = out_dir.join(format!("{}.svg", report.scenario));
        let data = svg::PlotData::from_rows(&report.rows)?;
        write_file(&path, svg::render(&data, &report.scenario).as_bytes())?;
        written.push(path);
    }
    Ok(written)
}
