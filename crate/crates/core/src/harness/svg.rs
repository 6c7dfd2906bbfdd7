//! Self-contained two-panel SVG figure: (a) trajectory, landmarks and
//! estimates, (b) bearing error against time.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::{unit_vectors, Vec2};
use crate::harness::output::CsvRow;
use crate::harness::stats::ErrorCurves;

/// Above this many landmarks panel (b) shows mean, max and the percentile
/// band instead of one curve per landmark.
pub const MAX_INDIVIDUAL_CURVES: usize = 10;

const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 360.0;
const MARGIN: f64 = 48.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PlotData {
    pub times: Vec<f64>,
    pub trajectory: Vec<Vec2>,
    /// Landmark positions, recovered as `p + y (cos theta*, sin theta*)`.
    pub landmarks: Vec<Vec2>,
    pub initial_estimates: Vec<Vec2>,
    pub final_estimates: Vec<Vec2>,
    /// `errors[i][k]`, wrapped, radians.
    pub errors: Vec<Vec<f64>>,
}

impl PlotData {
    pub fn from_rows(rows: &[CsvRow]) -> Result<Self> {
        let mut by_step: BTreeMap<usize, Vec<&CsvRow>> = BTreeMap::new();
        for r in rows {
            by_step.entry(r.k).or_default().push(r);
        }
        let Some(m) = by_step.values().next().map(Vec::len) else {
            return Err(Error::domain("no rows to plot"));
        };
        let mut data = PlotData {
            times: Vec::with_capacity(by_step.len()),
            trajectory: Vec::with_capacity(by_step.len()),
            landmarks: Vec::with_capacity(m),
            initial_estimates: Vec::with_capacity(m),
            final_estimates: Vec::with_capacity(m),
            errors: vec![Vec::with_capacity(by_step.len()); m],
        };
        for step in by_step.values_mut() {
            if step.len() != m {
                return Err(Error::domain(format!(
                    "step {} has {} landmarks, expected {m}",
                    step[0].k,
                    step.len()
                )));
            }
            step.sort_by_key(|r| r.landmark_id);
            data.times.push(step[0].t);
            data.trajectory.push(Vec2::new(step[0].px, step[0].py));
            for (i, r) in step.iter().enumerate() {
                data.errors[i].push(r.err_wrapped);
            }
        }
        let along = |r: &CsvRow, theta: f64| Vec2::new(r.px, r.py) + r.range * unit_vectors(theta).v;
        let first = by_step.values().next().expect("non-empty");
        for r in first.iter() {
            data.landmarks.push(along(r, r.theta_true));
            data.initial_estimates.push(along(r, r.theta_est));
        }
        let last = by_step.values().next_back().expect("non-empty");
        for r in last.iter() {
            data.final_estimates.push(along(r, r.theta_est));
        }
        Ok(data)
    }
}

struct Frame {
    x0: f64,
    y0: f64,
    xmin: f64,
    xmax: f64,
    ymin: f64,
    ymax: f64,
}

impl Frame {
    fn new(x0: f64, y0: f64, (xmin, xmax): (f64, f64), (ymin, ymax): (f64, f64)) -> Self {
        let pad = |lo: f64, hi: f64| {
            let span = (hi - lo).abs().max(1e-9);
            (lo - 0.05 * span, hi + 0.05 * span)
        };
        let (xmin, xmax) = pad(xmin, xmax);
        let (ymin, ymax) = pad(ymin, ymax);
        Self {
            x0,
            y0,
            xmin,
            xmax,
            ymin,
            ymax,
        }
    }

    /// Same scale on both axes.
    fn equal(mut self) -> Self {
        let w = PANEL_W - 2.0 * MARGIN;
        let h = PANEL_H - 2.0 * MARGIN;
        let sx = (self.xmax - self.xmin) / w;
        let sy = (self.ymax - self.ymin) / h;
        let s = sx.max(sy);
        let cx = 0.5 * (self.xmin + self.xmax);
        let cy = 0.5 * (self.ymin + self.ymax);
        self.xmin = cx - 0.5 * s * w;
        self.xmax = cx + 0.5 * s * w;
        self.ymin = cy - 0.5 * s * h;
        self.ymax = cy + 0.5 * s * h;
        self
    }

    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        let w = PANEL_W - 2.0 * MARGIN;
        let h = PANEL_H - 2.0 * MARGIN;
        (
            self.x0 + MARGIN + (x - self.xmin) / (self.xmax - self.xmin) * w,
            self.y0 + PANEL_H - MARGIN - (y - self.ymin) / (self.ymax - self.ymin) * h,
        )
    }

    fn axes(&self, out: &mut String, title: &str, xlabel: &str, ylabel: &str) {
        let (l, b) = (self.x0 + MARGIN, self.y0 + PANEL_H - MARGIN);
        let (r, t) = (self.x0 + PANEL_W - MARGIN, self.y0 + MARGIN);
        let _ = writeln!(
            out,
            r#"<rect x="{l:.1}" y="{t:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="dimgray"/>"#,
            r - l,
            b - t
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="14">{title}</text>"#,
            0.5 * (l + r),
            t - 16.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="12">{xlabel}</text>"#,
            0.5 * (l + r),
            b + 34.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="12" transform="rotate(-90 {:.1} {:.1})">{ylabel}</text>"#,
            l - 34.0,
            0.5 * (t + b),
            l - 34.0,
            0.5 * (t + b)
        );
        for (v, anchor) in [(self.xmin, "start"), (self.xmax, "end")] {
            let (x, _) = self.map(v, self.ymin);
            let _ = writeln!(
                out,
                r#"<text x="{x:.1}" y="{:.1}" text-anchor="{anchor}" font-size="10">{}</text>"#,
                b + 14.0,
                tick(v)
            );
        }
        for v in [self.ymin, self.ymax] {
            let (_, y) = self.map(self.xmin, v);
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{y:.1}" text-anchor="end" font-size="10">{}</text>"#,
                l - 4.0,
                tick(v)
            );
        }
    }

    fn polyline(&self, out: &mut String, xs: &[f64], ys: &[f64], style: &str) {
        let mut pts = String::new();
        for (&x, &y) in xs.iter().zip(ys) {
            let (px, py) = self.map(x, y);
            let _ = write!(pts, "{px:.2},{py:.2} ");
        }
        let _ = writeln!(out, r#"<polyline points="{}" fill="none" {style}/>"#, pts.trim_end());
    }
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.1e}")
    } else {
        format!("{v:.2}")
    }
}

fn extent(points: impl Iterator<Item = Vec2>) -> ((f64, f64), (f64, f64)) {
    points.fold(
        ((f64::INFINITY, f64::NEG_INFINITY), (f64::INFINITY, f64::NEG_INFINITY)),
        |((x0, x1), (y0, y1)), p| ((x0.min(p.x), x1.max(p.x)), (y0.min(p.y), y1.max(p.y))),
    )
}

pub fn render(data: &PlotData, title: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{:.0}" viewBox="0 0 {:.0} {:.0}" font-family="sans-serif">"#,
        2.0 * PANEL_W,
        PANEL_H + 24.0,
        2.0 * PANEL_W,
        PANEL_H + 24.0
    );
    let _ = writeln!(out, "<title>{}</title>", escape(title));
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    trajectory_panel(&mut out, data);
    error_panel(&mut out, data);
    out.push_str("</svg>\n");
    out
}

fn trajectory_panel(out: &mut String, data: &PlotData) {
    let all = data
        .trajectory
        .iter()
        .chain(&data.landmarks)
        .chain(&data.final_estimates)
        .chain(&data.initial_estimates)
        .copied()
        .filter(|p| p.is_finite());
    let (xr, yr) = extent(all);
    let f = Frame::new(0.0, 12.0, xr, yr).equal();
    f.axes(out, "(a) trajectory and landmarks", "x", "y");
    let xs: Vec<f64> = data.trajectory.iter().map(|p| p.x).collect();
    let ys: Vec<f64> = data.trajectory.iter().map(|p| p.y).collect();
    f.polyline(out, &xs, &ys, r#"stroke="red" stroke-width="1.5""#);
    let marker = if data.landmarks.len() > 50 { 2.0 } else { 5.0 };
    for l in &data.landmarks {
        let (x, y) = f.map(l.x, l.y);
        let _ = writeln!(
            out,
            r#"<path d="M{:.1},{:.1}L{:.1},{:.1}M{:.1},{:.1}L{:.1},{:.1}" stroke="green" stroke-width="1.2"/>"#,
            x - marker,
            y - marker,
            x + marker,
            y + marker,
            x - marker,
            y + marker,
            x + marker,
            y - marker
        );
    }
    for e in &data.final_estimates {
        let (x, y) = f.map(e.x, e.y);
        let _ = writeln!(
            out,
            r#"<circle cx="{x:.1}" cy="{y:.1}" r="{:.1}" fill="none" stroke="blue"/>"#,
            marker * 0.9
        );
    }
    for e in &data.initial_estimates {
        let (x, y) = f.map(e.x, e.y);
        let s = marker;
        let _ = writeln!(
            out,
            r#"<path d="M{x:.1},{:.1}L{:.1},{:.1}L{:.1},{:.1}Z" fill="black"/>"#,
            y - s,
            x - s,
            y + s,
            x + s,
            y + s
        );
    }
}

fn error_panel(out: &mut String, data: &PlotData) {
    let m = data.errors.len();
    let t = &data.times;
    let individual = m <= MAX_INDIVIDUAL_CURVES;
    let curves = if individual {
        None
    } else {
        let mut c = ErrorCurves::default();
        let mut column = vec![0.0; m];
        for k in 0..t.len() {
            for (slot, row) in column.iter_mut().zip(&data.errors) {
                *slot = row[k];
            }
            c.push_step(&column);
        }
        Some(c)
    };
    let (ymin, ymax) = match &curves {
        None => data
            .errors
            .iter()
            .flatten()
            .fold((0.0f64, 0.0f64), |(a, b), &e| (a.min(e), b.max(e))),
        Some(c) => (0.0, c.max.iter().copied().fold(0.0, f64::max)),
    };
    let tmin = t.first().copied().unwrap_or(0.0);
    let tmax = t.last().copied().unwrap_or(1.0);
    let f = Frame::new(PANEL_W, 12.0, (tmin, tmax), (ymin, ymax));
    match &curves {
        None => {
            f.axes(out, "(b) bearing error", "t [s]", "e [rad]");
            for e in &data.errors {
                f.polyline(out, t, e, r#"stroke="blue" stroke-width="1.2""#);
            }
        }
        Some(c) => {
            f.axes(out, "(b) |bearing error| across landmarks", "t [s]", "|e| [rad]");
            let mut band = String::new();
            for (&x, &y) in t.iter().zip(&c.band_high) {
                let (px, py) = f.map(x, y);
                let _ = write!(band, "{px:.2},{py:.2} ");
            }
            for (&x, &y) in t.iter().zip(&c.band_low).rev() {
                let (px, py) = f.map(x, y);
                let _ = write!(band, "{px:.2},{py:.2} ");
            }
            let _ = writeln!(
                out,
                r#"<polygon points="{}" fill="blue" fill-opacity="0.2" stroke="none"/>"#,
                band.trim_end()
            );
            f.polyline(out, t, &c.mean, r#"stroke="blue" stroke-width="1.5""#);
            f.polyline(out, t, &c.max, r#"stroke="black" stroke-dasharray="4 3""#);
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(m: usize, steps: usize) -> Vec<CsvRow> {
        let mut out = Vec::new();
        for k in 0..steps {
            for i in 0..m {
                out.push(CsvRow {
                    k,
                    t: k as f64 * 0.1,
                    landmark_id: i,
                    px: k as f64,
                    py: 0.0,
                    theta_est: 0.5 / (1.0 + k as f64),
                    theta_true: 0.0,
                    err_wrapped: -0.5 / (1.0 + k as f64),
                    range: 2.0 + i as f64,
                    beta: 0.0,
                    jacobian: 0.5,
                    gain_lower: 0.1,
                    gain_upper: 1.0,
                    cone_margin: 0.1,
                    small_angle_budget: 0.01,
                });
            }
        }
        out
    }

    #[test]
    fn recovers_landmarks_from_rows() {
        let d = PlotData::from_rows(&rows(2, 5)).unwrap();
        assert_eq!(d.times.len(), 5);
        assert_eq!(d.landmarks, vec![Vec2::new(2.0, 0.0), Vec2::new(3.0, 0.0)]);
        assert_eq!(d.errors[1].len(), 5);
    }

    #[test]
    fn individual_curves_for_few_landmarks() {
        let svg = render(&PlotData::from_rows(&rows(3, 20)).unwrap(), "a<b");
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a&lt;b"));
        assert_eq!(svg.matches(r#"stroke="blue" stroke-width="1.2""#).count(), 3);
        assert!(!svg.contains("<polygon"));
    }

    #[test]
    fn band_for_many_landmarks() {
        let svg = render(&PlotData::from_rows(&rows(40, 10)).unwrap(), "ring");
        assert!(svg.contains("<polygon"));
        assert!(svg.contains("stroke-dasharray"));
    }

    #[test]
    fn ragged_rows_are_rejected() {
        let mut r = rows(2, 3);
        r.pop();
        assert!(PlotData::from_rows(&r).is_err());
        assert!(PlotData::from_rows(&[]).is_err());
    }
}
