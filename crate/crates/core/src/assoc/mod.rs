//! Data association: weights, gating, clustering and the marginalization
//! engines shared by all trackers.

mod betas;
mod cluster;
mod confidence;
mod exact;
pub mod lap;
mod loopy;
mod murty;

use std::fmt;

use nalgebra::DMatrix;
use thiserror::Error;

pub use betas::{compute_betas, gate, gated_betas, PredictedBelief};
pub use cluster::{cluster, scatter_marginals, Cluster};
pub use confidence::confidence_scale;
pub use exact::{enumerate_events, event_count_bound, exact_marginals, DEFAULT_ENUMERATION_GUARD};
pub use loopy::{bp_marginals, BpOptions};
pub use murty::{event_log_weight, kbest_assignments, kbest_log_assignments};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssocError {
    #[error("enumeration would visit up to {events:e} events, guard is {guard}")]
    TooLarge { events: f64, guard: u64 },
    #[error("total association mass is zero")]
    Degenerate,
    #[error("belief propagation did not converge in {iterations} iterations")]
    NoConvergence { iterations: usize, last: Box<MarginalDA> },
    #[error("confidence exponent must be positive and finite: {0}")]
    InvalidRho(f64),
    #[error("k-best search needs strictly positive xi0 (measurement {0})")]
    ZeroXi(usize),
}

/// Target-oriented association event: `a[j] = 0` is a missed detection,
/// `a[j] = m >= 1` assigns measurement `m`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AssociationEvent(pub Vec<usize>);

impl AssociationEvent {
    /// No two targets share a measurement.
    pub fn is_valid(&self, measurements: usize) -> bool {
        let mut used = vec![false; measurements + 1];
        for &m in &self.0 {
            if m > measurements {
                return false;
            }
            if m > 0 {
                if used[m] {
                    return false;
                }
                used[m] = true;
            }
        }
        true
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for AssociationEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

/// Per-target marginal association pmfs, `L x (M + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalDA {
    probs: DMatrix<f64>,
}

impl MarginalDA {
    /// Normalizes each row of nonnegative weights.
    pub(crate) fn from_weights(mut weights: DMatrix<f64>) -> Result<Self, AssocError> {
        for mut row in weights.row_iter_mut() {
            let sum: f64 = row.iter().sum();
            if !(sum > 0.0 && sum.is_finite()) {
                return Err(AssocError::Degenerate);
            }
            row /= sum;
        }
        Ok(Self { probs: weights })
    }

    pub(crate) fn from_probs(probs: DMatrix<f64>) -> Self {
        Self { probs }
    }

    pub fn targets(&self) -> usize {
        self.probs.nrows()
    }

    pub fn columns(&self) -> usize {
        self.probs.ncols()
    }

    pub fn get(&self, target: usize, col: usize) -> f64 {
        self.probs[(target, col)]
    }

    pub fn row(&self, target: usize) -> Vec<f64> {
        self.probs.row(target).iter().copied().collect()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.probs
    }

    /// Probability that target `j` is associated with some measurement.
    pub fn detection_probability(&self, target: usize) -> f64 {
        1.0 - self.probs[(target, 0)]
    }

    /// Total association probability mass of measurement `m` (1-based).
    pub fn measurement_mass(&self, m: usize) -> f64 {
        self.probs.column(m).iter().sum()
    }

    pub fn max_abs_diff(&self, other: &MarginalDA) -> f64 {
        (&self.probs - &other.probs).amax()
    }
}
