//! GOSPA with decomposition, two-track separation statistics and runtime
//! summaries.

use nalgebra::{DMatrix, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assoc::lap;

/// Parameters of the GOSPA metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GospaParams {
    pub p: f64,
    pub c: f64,
    pub beta: f64,
}

impl Default for GospaParams {
    fn default() -> Self {
        Self { p: 1.0, c: 50.0, beta: 2.0 }
    }
}

/// GOSPA distance and the contributions of localization, missed and false
/// targets. The components are in units of `d^p`; for `p = 1` they add up
/// to the total.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GospaResult {
    pub total: f64,
    pub localization: f64,
    pub missed: f64,
    pub false_: f64,
    /// Matched `(truth, estimate)` index pairs.
    #[serde(skip)]
    pub assigned: Vec<(usize, usize)>,
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("fewer than two estimates matched to the two targets")]
pub struct UndefinedSample;

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum MetricError {
    #[error("invalid GOSPA parameters p={p}, c={c}, beta={beta}")]
    InvalidParams { p: f64, c: f64, beta: f64 },
}

/// GOSPA between two finite sets of positions, solved exactly by linear
/// assignment.
pub fn gospa(
    truth: &[Vector2<f64>],
    estimates: &[Vector2<f64>],
    params: GospaParams,
) -> Result<GospaResult, MetricError> {
    let GospaParams { p, c, beta } = params;
    if !(p >= 1.0 && c > 0.0 && beta > 0.0 && beta <= 2.0) {
        return Err(MetricError::InvalidParams { p, c, beta });
    }
    let unassigned = c.powf(p) / beta;
    let (n, m) = (truth.len(), estimates.len());
    // With beta = 2 a pair at distance >= c costs exactly as much as leaving
    // both points unassigned; such pairs are reported as missed plus false.
    let cut_pairs = 2.0 * unassigned <= c.powf(p);
    let pair_cost = |i: usize, j: usize| (truth[i] - estimates[j]).norm().min(c).powf(p);
    let mut assigned = Vec::new();
    if n > 0 && m > 0 {
        // Square problem with dummy columns/rows for unassigned points.
        let size = n + m;
        let mut cost = DMatrix::from_element(size, size, 0.0);
        for i in 0..size {
            for j in 0..size {
                cost[(i, j)] = match (i < n, j < m) {
                    (true, true) => pair_cost(i, j),
                    (true, false) => {
                        if j - m == i {
                            unassigned
                        } else {
                            f64::INFINITY
                        }
                    }
                    (false, true) => {
                        if i - n == j {
                            unassigned
                        } else {
                            f64::INFINITY
                        }
                    }
                    (false, false) => 0.0,
                };
            }
        }
        let (cols, _) = lap::solve(&cost).expect("dummy assignment is always feasible");
        for (i, &j) in cols.iter().enumerate().take(n) {
            if j < m && (!cut_pairs || (truth[i] - estimates[j]).norm() < c) {
                assigned.push((i, j));
            }
        }
    }
    let localization: f64 = assigned.iter().map(|&(i, j)| pair_cost(i, j)).sum();
    let missed = (n - assigned.len()) as f64 * unassigned;
    let false_ = (m - assigned.len()) as f64 * unassigned;
    let total = (localization + missed + false_).powf(1.0 / p);
    Ok(GospaResult { total, localization, missed, false_, assigned })
}

/// The y-coordinates of the estimates matched to two truth targets, in
/// truth order.
pub fn matched_pair(result: &GospaResult, estimates: &[Vector2<f64>]) -> Result<[f64; 2], UndefinedSample> {
    let mut ys = [None, None];
    for &(i, j) in &result.assigned {
        if i < 2 {
            ys[i] = Some(estimates[j][1]);
        }
    }
    match ys {
        [Some(a), Some(b)] => Ok([a, b]),
        _ => Err(UndefinedSample),
    }
}

/// Separation of two tracks along y.
pub fn d_tracks(ys: [f64; 2]) -> f64 {
    (ys[0] - ys[1]).abs()
}

/// Mean distance of two tracks from the y-center `y = 0`.
pub fn d_center(ys: [f64; 2]) -> f64 {
    (ys[0].abs() + ys[1].abs()) / 2.0
}

/// Summary of per-run wall-clock times in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RuntimeStats {
    pub min: f64,
    pub median: f64,
    pub mean: f64,
    pub max: f64,
}

impl RuntimeStats {
    pub fn from_samples(samples: &[f64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        let median = if n % 2 == 1 { s[n / 2] } else { (s[n / 2 - 1] + s[n / 2]) / 2.0 };
        Some(Self { min: s[0], median, mean: s.iter().sum::<f64>() / n as f64, max: s[n - 1] })
    }
}
