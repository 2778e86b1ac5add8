//! Experiment configuration and its validation.
//!
//! [`ScenarioConfig`] is the user-facing JSON document; every field is
//! optional. [`validate_config`] range-checks it and fills the defaults of the
//! simulation study, producing a [`ValidatedConfig`].

use std::fmt;
use std::str::FromStr;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::KinematicState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioId {
    S1,
    S2,
    S3,
    S4,
    #[serde(rename = "S4-7")]
    S4x7,
    #[serde(rename = "S4-8")]
    S4x8,
    #[serde(rename = "S4-9")]
    S4x9,
    #[serde(rename = "custom")]
    Custom,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 8] = [
        ScenarioId::S1,
        ScenarioId::S2,
        ScenarioId::S3,
        ScenarioId::S4,
        ScenarioId::S4x7,
        ScenarioId::S4x8,
        ScenarioId::S4x9,
        ScenarioId::Custom,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ScenarioId::S1 => "S1",
            ScenarioId::S2 => "S2",
            ScenarioId::S3 => "S3",
            ScenarioId::S4 => "S4",
            ScenarioId::S4x7 => "S4-7",
            ScenarioId::S4x8 => "S4-8",
            ScenarioId::S4x9 => "S4-9",
            ScenarioId::Custom => "custom",
        }
    }

    /// Number of targets on the circle for the S4 family.
    pub fn circle_targets(&self) -> Option<usize> {
        match self {
            ScenarioId::S4 => Some(6),
            ScenarioId::S4x7 => Some(7),
            ScenarioId::S4x8 => Some(8),
            ScenarioId::S4x9 => Some(9),
            _ => None,
        }
    }

    /// Whether the two-track separation metrics make sense.
    pub fn has_parallel_pair(&self) -> bool {
        matches!(self, ScenarioId::S1 | ScenarioId::S2)
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        ScenarioId::ALL.iter().copied().find(|id| id.name().to_ascii_lowercase() == lower).ok_or_else(|| {
            let names: Vec<_> = ScenarioId::ALL.iter().map(|id| id.name()).collect();
            format!("unknown scenario '{s}', expected one of {}", names.join(", "))
        })
    }
}

/// Axis-aligned rectangle, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Roi {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Roi {
    pub fn square(half_width: f64) -> Self {
        Self { x_min: -half_width, x_max: half_width, y_min: -half_width, y_max: half_width }
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }

    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        p[0] >= self.x_min && p[0] <= self.x_max && p[1] >= self.y_min && p[1] <= self.y_max
    }
}

impl Default for Roi {
    fn default() -> Self {
        Roi::square(750.0)
    }
}

/// M-of-N confirmation rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MofN {
    pub m: usize,
    pub n: usize,
}

/// A constant-velocity target of a custom scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CustomTarget {
    /// First scan the target exists (1-based).
    pub birth: usize,
    /// Last scan the target exists (inclusive).
    pub death: usize,
    /// State at the birth scan.
    pub initial: KinematicState,
}

/// Tracker parameters as they appear in the JSON document.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerParamsConfig {
    pub gate_threshold: Option<f64>,
    pub jpda_confirm: Option<MofN>,
    pub termination_misses: Option<usize>,
    pub hit_threshold: Option<f64>,
    pub mht_confirm: Option<MofN>,
    pub mht_window: Option<usize>,
    pub mht_hypotheses: Option<usize>,
    pub mht_leaf_cap: Option<usize>,
    pub mht_birth_ratio: Option<f64>,
    pub existence_threshold: Option<f64>,
    pub particles: Option<usize>,
    pub birth_existence: Option<f64>,
    pub prune_threshold: Option<f64>,
    pub new_velocity_std: Option<f64>,
    pub bp_tolerance: Option<f64>,
    pub bp_max_iterations: Option<usize>,
    pub bp_damping: Option<f64>,
    pub enumeration_guard: Option<u64>,
}

/// Experiment definition. Unset fields take the simulation-study defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: Option<ScenarioId>,
    pub steps: Option<usize>,
    /// Scan period `T`, seconds.
    pub period: Option<f64>,
    /// Process-noise intensity, m^2/s^4.
    pub sigma_u2: Option<f64>,
    /// Measurement-noise standard deviation, meters.
    pub sigma_v: Option<f64>,
    pub p_d: Option<f64>,
    pub p_s: Option<f64>,
    /// Mean clutter count per scan.
    pub mu_c: Option<f64>,
    pub roi: Option<Roi>,
    pub seed: Option<u64>,
    /// Hand trackers the true birth times and positions, disable spawning
    /// and death. Used by the coalescence ablation.
    pub known_births: Option<bool>,
    pub custom_targets: Option<Vec<CustomTarget>>,
    pub tracker: TrackerParamsConfig,
}

impl ScenarioConfig {
    pub fn for_scenario(id: ScenarioId) -> Self {
        Self { scenario: Some(id), ..Self::default() }
    }
}

/// Concrete tracker parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerParams {
    pub gate_threshold: f64,
    pub jpda_confirm: MofN,
    pub termination_misses: usize,
    pub hit_threshold: f64,
    pub mht_confirm: MofN,
    pub mht_window: usize,
    pub mht_hypotheses: usize,
    pub mht_leaf_cap: usize,
    pub mht_birth_ratio: f64,
    pub existence_threshold: f64,
    pub particles: usize,
    pub birth_existence: f64,
    pub prune_threshold: f64,
    pub new_velocity_std: f64,
    pub bp_tolerance: f64,
    pub bp_max_iterations: usize,
    pub bp_damping: f64,
    pub enumeration_guard: u64,
}

impl Default for TrackerParams {
    fn default() -> Self {
        Self {
            gate_threshold: 13.82,
            jpda_confirm: MofN { m: 12, n: 24 },
            termination_misses: 6,
            hit_threshold: 0.5,
            mht_confirm: MofN { m: 8, n: 16 },
            mht_window: 5,
            mht_hypotheses: 100,
            mht_leaf_cap: 20,
            mht_birth_ratio: 0.1,
            existence_threshold: 0.5,
            particles: 5000,
            birth_existence: 1e-4,
            prune_threshold: 1e-4,
            new_velocity_std: 20.0,
            bp_tolerance: 1e-6,
            bp_max_iterations: 200,
            bp_damping: 0.0,
            enumeration_guard: 100_000_000,
        }
    }
}

/// A configuration with every field resolved and range-checked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidatedConfig {
    pub scenario: ScenarioId,
    pub steps: usize,
    pub period: f64,
    pub sigma_u2: f64,
    pub sigma_v: f64,
    pub p_d: f64,
    pub p_s: f64,
    pub mu_c: f64,
    pub roi: Roi,
    pub seed: u64,
    pub known_births: bool,
    pub custom_targets: Vec<CustomTarget>,
    pub tracker: TrackerParams,
}

impl ValidatedConfig {
    /// Defaults for one of the built-in scenarios.
    pub fn for_scenario(id: ScenarioId) -> Self {
        validate_config(&ScenarioConfig::for_scenario(id)).expect("built-in defaults are valid")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("invalid configuration: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidConfig(Vec<Violation>),
}

impl ConfigError {
    pub fn violations(&self) -> &[Violation] {
        match self {
            ConfigError::InvalidConfig(v) => v,
        }
    }
}

struct Checker {
    violations: Vec<Violation>,
}

impl Checker {
    fn fail(&mut self, field: &'static str, message: String) {
        self.violations.push(Violation { field, message });
    }

    fn probability(&mut self, field: &'static str, value: f64) {
        if !(0.0..=1.0).contains(&value) {
            self.fail(field, format!("{field} out of [0,1]: {value}"));
        }
    }

    fn positive(&mut self, field: &'static str, value: f64) {
        if !(value > 0.0 && value.is_finite()) {
            self.fail(field, format!("{field} must be positive and finite: {value}"));
        }
    }

    fn nonnegative(&mut self, field: &'static str, value: f64) {
        if !(value >= 0.0 && value.is_finite()) {
            self.fail(field, format!("{field} must be nonnegative and finite: {value}"));
        }
    }

    fn at_least(&mut self, field: &'static str, value: usize, min: usize) {
        if value < min {
            self.fail(field, format!("{field} must be at least {min}: {value}"));
        }
    }
}

/// Validate a configuration and fill defaults.
pub fn validate_config(cfg: &ScenarioConfig) -> Result<ValidatedConfig, ConfigError> {
    let scenario = cfg.scenario.unwrap_or(ScenarioId::S1);
    let default_sigma_u2 = if scenario.circle_targets().is_some() { 0.0001 } else { 0.1 };
    let d = TrackerParams::default();
    let t = &cfg.tracker;
    let tracker = TrackerParams {
        gate_threshold: t.gate_threshold.unwrap_or(d.gate_threshold),
        jpda_confirm: t.jpda_confirm.unwrap_or(d.jpda_confirm),
        termination_misses: t.termination_misses.unwrap_or(d.termination_misses),
        hit_threshold: t.hit_threshold.unwrap_or(d.hit_threshold),
        mht_confirm: t.mht_confirm.unwrap_or(d.mht_confirm),
        mht_window: t.mht_window.unwrap_or(d.mht_window),
        mht_hypotheses: t.mht_hypotheses.unwrap_or(d.mht_hypotheses),
        mht_leaf_cap: t.mht_leaf_cap.unwrap_or(d.mht_leaf_cap),
        mht_birth_ratio: t.mht_birth_ratio.unwrap_or(d.mht_birth_ratio),
        existence_threshold: t.existence_threshold.unwrap_or(d.existence_threshold),
        particles: t.particles.unwrap_or(d.particles),
        birth_existence: t.birth_existence.unwrap_or(d.birth_existence),
        prune_threshold: t.prune_threshold.unwrap_or(d.prune_threshold),
        new_velocity_std: t.new_velocity_std.unwrap_or(d.new_velocity_std),
        bp_tolerance: t.bp_tolerance.unwrap_or(d.bp_tolerance),
        bp_max_iterations: t.bp_max_iterations.unwrap_or(d.bp_max_iterations),
        bp_damping: t.bp_damping.unwrap_or(d.bp_damping),
        enumeration_guard: t.enumeration_guard.unwrap_or(d.enumeration_guard),
    };
    let out = ValidatedConfig {
        scenario,
        steps: cfg.steps.unwrap_or(300),
        period: cfg.period.unwrap_or(1.0),
        sigma_u2: cfg.sigma_u2.unwrap_or(default_sigma_u2),
        sigma_v: cfg.sigma_v.unwrap_or(10.0),
        p_d: cfg.p_d.unwrap_or(0.5),
        p_s: cfg.p_s.unwrap_or(0.995),
        mu_c: cfg.mu_c.unwrap_or(10.0),
        roi: cfg.roi.unwrap_or_default(),
        seed: cfg.seed.unwrap_or(0),
        known_births: cfg.known_births.unwrap_or(false),
        custom_targets: cfg.custom_targets.clone().unwrap_or_default(),
        tracker,
    };

    let mut c = Checker { violations: Vec::new() };
    c.at_least("steps", out.steps, 1);
    c.positive("period", out.period);
    c.nonnegative("sigma_u2", out.sigma_u2);
    c.positive("sigma_v", out.sigma_v);
    c.probability("p_d", out.p_d);
    c.probability("p_s", out.p_s);
    c.nonnegative("mu_c", out.mu_c);
    let roi = out.roi;
    if !(roi.x_max > roi.x_min && roi.y_max > roi.y_min && roi.area().is_finite()) {
        c.fail("roi", format!("roi must be a nonempty rectangle: {roi:?}"));
    }
    if scenario == ScenarioId::Custom && out.custom_targets.is_empty() {
        c.fail("custom_targets", "custom scenario needs at least one target".into());
    }
    for target in &out.custom_targets {
        if target.birth < 1 || target.death < target.birth || !target.initial.is_finite() {
            c.fail("custom_targets", format!("invalid custom target {target:?}"));
        }
    }
    let p = &out.tracker;
    c.positive("tracker.gate_threshold", p.gate_threshold);
    if p.jpda_confirm.m == 0 || p.jpda_confirm.m > p.jpda_confirm.n {
        c.fail("tracker.jpda_confirm", format!("need 1 <= M <= N: {:?}", p.jpda_confirm));
    }
    if p.mht_confirm.m == 0 || p.mht_confirm.m > p.mht_confirm.n || p.mht_confirm.n > 32 {
        c.fail("tracker.mht_confirm", format!("need 1 <= M <= N <= 32: {:?}", p.mht_confirm));
    }
    c.at_least("tracker.termination_misses", p.termination_misses, 1);
    c.probability("tracker.hit_threshold", p.hit_threshold);
    c.at_least("tracker.mht_window", p.mht_window, 1);
    c.at_least("tracker.mht_hypotheses", p.mht_hypotheses, 1);
    c.at_least("tracker.mht_leaf_cap", p.mht_leaf_cap, 1);
    c.positive("tracker.mht_birth_ratio", p.mht_birth_ratio);
    c.probability("tracker.existence_threshold", p.existence_threshold);
    c.at_least("tracker.particles", p.particles, 1);
    c.probability("tracker.birth_existence", p.birth_existence);
    if p.birth_existence >= 1.0 {
        c.fail("tracker.birth_existence", "birth existence must be below 1".into());
    }
    c.probability("tracker.prune_threshold", p.prune_threshold);
    c.positive("tracker.new_velocity_std", p.new_velocity_std);
    c.positive("tracker.bp_tolerance", p.bp_tolerance);
    c.at_least("tracker.bp_max_iterations", p.bp_max_iterations, 1);
    if !(0.0..1.0).contains(&p.bp_damping) {
        c.fail("tracker.bp_damping", format!("damping must lie in [0,1): {}", p.bp_damping));
    }
    if p.enumeration_guard == 0 {
        c.fail("tracker.enumeration_guard", "guard must be positive".into());
    }

    if c.violations.is_empty() {
        Ok(out)
    } else {
        Err(ConfigError::InvalidConfig(c.violations))
    }
}
