//! Common tracker interface and factory.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix4, Vector2, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assoc::AssocError;
use crate::bp::{BpTracker, BpVariant};
use crate::config::ValidatedConfig;
use crate::jpda::{JpdaMode, JpdaTracker};
use crate::mht::MhtTracker;
use crate::models::ModelError;
use crate::rng::tracker_stream;
use crate::types::{GaussianBelief, KinematicState, MeasurementFrame};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackerError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Assoc(#[from] AssocError),
    #[error("tracker invariant violated: {0}")]
    Invariant(String),
}

/// A reported target: track label and MMSE state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackEstimate {
    pub label: u64,
    pub state: KinematicState,
}

/// A target appearance handed to trackers in known-births mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnownBirth {
    pub time: usize,
    pub position: Vector2<f64>,
}

/// Counters of fallbacks that do not abort a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackerDiagnostics {
    /// Clusters whose exact enumeration was replaced by belief propagation.
    pub enumeration_fallbacks: u64,
    /// Belief-propagation calls that stopped at the iteration limit.
    pub bp_not_converged: u64,
    /// Hypotheses dropped because of the hypothesis or leaf caps.
    pub hypotheses_capped: u64,
}

pub trait Tracker: Send {
    fn kind(&self) -> TrackerKind;

    /// Processes one scan.
    fn step(&mut self, frame: &MeasurementFrame) -> Result<(), TrackerError>;

    /// Reported targets after the last step.
    fn estimates(&self) -> Vec<TrackEstimate>;

    fn diagnostics(&self) -> TrackerDiagnostics;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TrackerKind {
    Jpda,
    JpdaStar,
    Mht,
    BpPart,
    BpGauss,
    ExPart,
    ExGauss,
}

impl TrackerKind {
    pub const ALL: [TrackerKind; 7] = [
        TrackerKind::Jpda,
        TrackerKind::JpdaStar,
        TrackerKind::Mht,
        TrackerKind::BpPart,
        TrackerKind::BpGauss,
        TrackerKind::ExPart,
        TrackerKind::ExGauss,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            TrackerKind::Jpda => "jpda",
            TrackerKind::JpdaStar => "jpda-star",
            TrackerKind::Mht => "mht",
            TrackerKind::BpPart => "bp-part",
            TrackerKind::BpGauss => "bp-gauss",
            TrackerKind::ExPart => "ex-part",
            TrackerKind::ExGauss => "ex-gauss",
        }
    }

    pub fn valid_names() -> String {
        TrackerKind::ALL.iter().map(|k| k.name()).collect::<Vec<_>>().join(", ")
    }

    fn stream_id(&self) -> u64 {
        *self as u64 + 1
    }

    /// Instantiates the tracker for one Monte Carlo run.
    pub fn build(&self, cfg: &ValidatedConfig, run: u64, known: Option<Vec<KnownBirth>>) -> Box<dyn Tracker> {
        let rng = tracker_stream(cfg.seed, run, self.stream_id());
        match self {
            TrackerKind::Jpda => Box::new(JpdaTracker::new(cfg, JpdaMode::Jpda, known)),
            TrackerKind::JpdaStar => Box::new(JpdaTracker::new(cfg, JpdaMode::JpdaStar, known)),
            TrackerKind::Mht => Box::new(MhtTracker::new(cfg, known)),
            TrackerKind::BpPart => Box::new(BpTracker::new(cfg, BpVariant::PartBp, known, rng)),
            TrackerKind::BpGauss => Box::new(BpTracker::new(cfg, BpVariant::GaussBp, known, rng)),
            TrackerKind::ExPart => Box::new(BpTracker::new(cfg, BpVariant::PartEx, known, rng)),
            TrackerKind::ExGauss => Box::new(BpTracker::new(cfg, BpVariant::GaussEx, known, rng)),
        }
    }
}

impl fmt::Display for TrackerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrackerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TrackerKind::ALL
            .iter()
            .copied()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown tracker '{s}', valid names: {}", TrackerKind::valid_names()))
    }
}

/// Belief of a track started from a single measurement: position at the
/// measurement, zero velocity, position std `sigma_v` and velocity std
/// `velocity_std` per axis.
pub fn birth_belief(z: &Vector2<f64>, sigma_v: f64, velocity_std: f64) -> GaussianBelief {
    let (pv, vv) = (sigma_v * sigma_v, velocity_std * velocity_std);
    GaussianBelief::from_trusted(
        Vector4::new(z[0], z[1], 0.0, 0.0),
        Matrix4::from_diagonal(&Vector4::new(pv, pv, vv, vv)),
    )
}
