//! Threshold calibration: balanced-error grid search over midpoints of the
//! pooled scores, plus the histogram export used for density plots.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::MunchError;

pub const DENSITY_BINS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityBin {
    pub left: f64,
    pub right: f64,
    pub forget_density: f64,
    pub retain_density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub tau: f64,
    /// Mean of the two error rates below at `tau`.
    pub balanced_error: f64,
    /// Fraction of forget scores at or below `tau` (escaped rejection).
    pub forget_miss: f64,
    /// Fraction of retain scores above `tau` (wrongly rejected).
    pub retain_false_reject: f64,
    /// Every pooled score was identical; `tau` is that value.
    pub degenerate: bool,
    /// No candidate threshold beats chance.
    pub inseparable: bool,
    /// Empty when the pooled finite range has zero width.
    pub bins: Vec<DensityBin>,
}

fn rates_at(tau: f64, forget: &[f64], retain: &[f64]) -> (f64, f64, f64) {
    let miss = forget.iter().filter(|&&s| s <= tau).count() as f64 / forget.len() as f64;
    let false_reject = retain.iter().filter(|&&s| s > tau).count() as f64 / retain.len() as f64;
    ((miss + false_reject) / 2.0, miss, false_reject)
}

/// Fixed-width histograms over the pooled finite range, one density column
/// per side, each normalized to integrate to one over the plotted range.
/// Non-finite scores are left out of the plot (they would stretch the axis)
/// but still participate in the threshold search.
fn histogram(forget: &[f64], retain: &[f64]) -> Vec<DensityBin> {
    let finite: Vec<f64> =
        forget.iter().chain(retain).copied().filter(|s| s.is_finite()).collect();
    let Some(&min) = finite.iter().min_by(|a, b| a.total_cmp(b)) else {
        return Vec::new();
    };
    let max = *finite.iter().max_by(|a, b| a.total_cmp(b)).expect("nonempty");
    if max == min {
        return Vec::new();
    }
    let width = (max - min) / DENSITY_BINS as f64;
    let index = |s: f64| (((s - min) / width) as usize).min(DENSITY_BINS - 1);
    let mut counts = [[0usize; DENSITY_BINS]; 2];
    let mut totals = [0usize; 2];
    for (side, scores) in [forget, retain].into_iter().enumerate() {
        for &s in scores.iter().filter(|s| s.is_finite()) {
            counts[side][index(s)] += 1;
            totals[side] += 1;
        }
    }
    let density = |side: usize, bin: usize| {
        if totals[side] == 0 {
            0.0
        } else {
            counts[side][bin] as f64 / (totals[side] as f64 * width)
        }
    };
    (0..DENSITY_BINS)
        .map(|b| DensityBin {
            left: min + b as f64 * width,
            right: min + (b + 1) as f64 * width,
            forget_density: density(0, b),
            retain_density: density(1, b),
        })
        .collect()
}

/// Picks the threshold minimizing balanced error over all midpoints of
/// consecutive distinct pooled scores; ties go to the smallest threshold
/// (rejecting more aggressively). All scores identical is reported as a
/// degenerate calibration with the shared value as the threshold.
pub fn calibrate_threshold(
    forget_scores: &[f64],
    retain_valid_scores: &[f64],
) -> Result<CalibrationReport, MunchError> {
    if forget_scores.is_empty() {
        return Err(MunchError::EmptyScores { side: "forget" });
    }
    if retain_valid_scores.is_empty() {
        return Err(MunchError::EmptyScores { side: "retain" });
    }
    let mut pooled: Vec<f64> =
        forget_scores.iter().chain(retain_valid_scores).copied().collect();
    pooled.sort_by(f64::total_cmp);
    pooled.dedup();
    let bins = histogram(forget_scores, retain_valid_scores);

    if pooled.len() == 1 {
        let tau = pooled[0];
        let (balanced_error, forget_miss, retain_false_reject) =
            rates_at(tau, forget_scores, retain_valid_scores);
        return Ok(CalibrationReport {
            tau,
            balanced_error,
            forget_miss,
            retain_false_reject,
            degenerate: true,
            inseparable: balanced_error >= 0.5,
            bins,
        });
    }

    let mut best: Option<(f64, f64, f64, f64)> = None;
    for pair in pooled.windows(2) {
        let tau = 0.5 * (pair[0] + pair[1]);
        let (balanced, miss, fr) = rates_at(tau, forget_scores, retain_valid_scores);
        if best.is_none_or(|(_, b, _, _)| balanced < b) {
            best = Some((tau, balanced, miss, fr));
        }
    }
    let (tau, balanced_error, forget_miss, retain_false_reject) =
        best.expect("at least one midpoint exists");
    Ok(CalibrationReport {
        tau,
        balanced_error,
        forget_miss,
        retain_false_reject,
        degenerate: false,
        inseparable: balanced_error >= 0.5,
        bins,
    })
}

/// The density plot data: one row per bin.
pub fn write_density_tsv(
    report: &CalibrationReport,
    out: &mut dyn Write,
) -> Result<(), MunchError> {
    writeln!(out, "bin_left\tbin_right\tforget_density\tretain_density")?;
    for b in &report.bins {
        writeln!(
            out,
            "{:.6}\t{:.6}\t{:.6}\t{:.6}",
            b.left, b.right, b.forget_density, b.retain_density
        )?;
    }
    Ok(())
}
