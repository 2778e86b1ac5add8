//! Multitarget tracking workbench.
//!
//! Four families of trackers share one point-target measurement model:
//!
//! - [`jpda`]: JPDA and JPDA* filters with M/N track management,
//! - [`mht`]: track-oriented MHT with N-scan pruning and per-track smoothing,
//! - [`bp`]: belief-propagation tracking with Gaussian or particle beliefs
//!   and exact-marginalization ablations,
//!
//! all built on the data-association toolbox in [`assoc`] and the
//! linear-Gaussian models in [`models`]. [`simgen`] generates the S1-S4
//! scenarios and drives Monte Carlo batches; [`metrics`] scores the output.

pub mod assoc;
pub mod bp;
pub mod config;
pub mod jpda;
pub mod metrics;
pub mod mht;
pub mod models;
pub mod rng;
pub mod simgen;
pub mod tracker;
pub mod types;

pub use config::{validate_config, ScenarioConfig, ScenarioId, ValidatedConfig};
pub use tracker::{TrackEstimate, Tracker, TrackerError, TrackerKind};
pub use types::{
    AssociationProblem, Belief, GaussianBelief, KinematicState, MeasurementFrame, Origin, ParticleBelief,
    PotentialTrack, TrackStatus,
};
