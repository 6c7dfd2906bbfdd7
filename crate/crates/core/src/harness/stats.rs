//! Cross-landmark error statistics per time step.

use crate::error::{Error, Result};

pub const BAND_LOW: f64 = 0.025;
pub const BAND_HIGH: f64 = 0.975;

/// Summary curves of `|e_i(k)|` over landmarks, one entry per step.
///
/// The band is the 2.5th to 97.5th percentile envelope of the absolute
/// errors across landmarks (linear interpolation between order statistics),
/// not a Gaussian confidence interval.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ErrorCurves {
    pub mean: Vec<f64>,
    pub max: Vec<f64>,
    pub band_low: Vec<f64>,
    pub band_high: Vec<f64>,
}

impl ErrorCurves {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Appends the statistics of one step's errors (signed or absolute).
    pub fn push_step(&mut self, errors: &[f64]) {
        let mut abs: Vec<f64> = errors.iter().map(|e| e.abs()).collect();
        abs.sort_by(f64::total_cmp);
        let n = abs.len() as f64;
        self.mean.push(abs.iter().sum::<f64>() / n);
        self.max.push(*abs.last().expect("non-empty step"));
        self.band_low.push(quantile_sorted(&abs, BAND_LOW));
        self.band_high.push(quantile_sorted(&abs, BAND_HIGH));
    }
}

/// Quantile of sorted data, linear interpolation between closest ranks.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Summary curves from a landmark-major error matrix `errors[i][k]`.
pub fn error_stats(errors: &[Vec<f64>]) -> Result<ErrorCurves> {
    let steps = errors.first().map(Vec::len).unwrap_or(0);
    if steps == 0 {
        return Err(Error::domain(
            "error statistics need at least one landmark and one step",
        ));
    }
    if errors.iter().any(|row| row.len() != steps) {
        return Err(Error::domain("error rows must all have the same length"));
    }
    let mut curves = ErrorCurves::default();
    let mut column = vec![0.0; errors.len()];
    for k in 0..steps {
        for (slot, row) in column.iter_mut().zip(errors) {
            *slot = row[k];
        }
        curves.push_step(&column);
    }
    Ok(curves)
}
