//! Truth trajectories, measurement simulation and the Monte Carlo driver.
//!
//! Scenario geometry (T = 1 s, scans are 1-based):
//!
//! | scenario | targets | path |
//! |----------|---------|------|
//! | S1 | 2 | `x = -600 + 4 (k - 1)`; `y = ±(5 + 0.8 (100 - k))` up to scan 100, `±5` on scans 101–200, `±(5 + 0.8 (k - 200))` afterwards |
//! | S2 | 2 | same `x`; `y = ±5` up to scan 150, `±(5 + 0.8 (k - 150))` afterwards |
//! | S3 | 2 | `(4 (k - 150), ±0.4 (k - 150))`, crossing at scan 150 |
//! | S4-n | n = 6..9 | born at scan 38 on the radius-150 m circle at angles `2 pi i / n`, moving through the origin at 4/3 m/s (at the origin after 112.5 s) |
//!
//! All S1–S3 targets exist from scan 1 to the last scan; S4 targets from
//! scan 38 to the last scan. A custom scenario takes constant-velocity
//! targets from the configuration.

use std::time::Instant;

use log::warn;
use nalgebra::Vector2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ScenarioId, ValidatedConfig};
use crate::metrics::{d_center, d_tracks, gospa, matched_pair, GospaParams, RuntimeStats};
use crate::models::MeasurementModel;
use crate::rng::{scan_stream, Purpose};
use crate::tracker::{KnownBirth, TrackerDiagnostics, TrackerError, TrackerKind};
use crate::types::{KinematicState, MeasurementFrame, Origin};

/// Speed along x of the S1/S2 targets and of both S3 axes scale, m/s.
const S12_SPEED: f64 = 4.0;
const S12_X0: f64 = -600.0;
const S1_APPROACH_VY: f64 = 0.8;
const S1_PARALLEL: (usize, usize) = (101, 200);
const HALF_SEPARATION: f64 = 5.0;
const SEPARATION_VY: f64 = 0.8;
const S2_PARALLEL_END: usize = 150;
const S3_CROSSING: usize = 150;
const S3_VY: f64 = 0.4;
const S4_RADIUS: f64 = 150.0;
const S4_BIRTH: usize = 38;
const S4_SPEED: f64 = 4.0 / 3.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no Monte Carlo runs requested")]
    NoRuns,
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

/// Deterministic path of one target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthTarget {
    pub birth: usize,
    pub death: usize,
    /// States for scans `birth..=death`.
    pub states: Vec<KinematicState>,
}

impl TruthTarget {
    pub fn alive(&self, scan: usize) -> bool {
        (self.birth..=self.death).contains(&scan)
    }

    pub fn state(&self, scan: usize) -> Option<KinematicState> {
        self.alive(scan).then(|| self.states[scan - self.birth])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthTrajectory {
    pub steps: usize,
    pub targets: Vec<TruthTarget>,
}

impl TruthTrajectory {
    /// Positions of the targets alive at `scan`, in target order.
    pub fn positions(&self, scan: usize) -> Vec<Vector2<f64>> {
        self.targets.iter().filter_map(|t| t.state(scan)).map(|s| s.position()).collect()
    }

    /// Target appearances for trackers run with known births.
    pub fn known_births(&self) -> Vec<KnownBirth> {
        self.targets.iter().map(|t| KnownBirth { time: t.birth, position: t.states[0].position() }).collect()
    }

    /// y-coordinates of a two-target scenario at `scan`.
    pub fn pair_ys(&self, scan: usize) -> Option<[f64; 2]> {
        match self.targets.as_slice() {
            [a, b] => Some([a.state(scan)?.py, b.state(scan)?.py]),
            _ => None,
        }
    }
}

fn from_positions(birth: usize, death: usize, pos: impl Fn(usize) -> (f64, f64)) -> TruthTarget {
    // Velocity is the forward difference, the backward one on the last scan.
    let states = (birth..=death)
        .map(|k| {
            let (x, y) = pos(k);
            let (nx, ny) = if k < death { pos(k + 1) } else { (2.0 * x - pos(k - 1).0, 2.0 * y - pos(k - 1).1) };
            KinematicState::new(x, y, nx - x, ny - y)
        })
        .collect();
    TruthTarget { birth, death, states }
}

fn s1_y(k: usize) -> f64 {
    let (start, end) = S1_PARALLEL;
    if k < start {
        HALF_SEPARATION + S1_APPROACH_VY * (start - 1 - k) as f64
    } else if k <= end {
        HALF_SEPARATION
    } else {
        HALF_SEPARATION + SEPARATION_VY * (k - end) as f64
    }
}

fn s2_y(k: usize) -> f64 {
    if k <= S2_PARALLEL_END {
        HALF_SEPARATION
    } else {
        HALF_SEPARATION + SEPARATION_VY * (k - S2_PARALLEL_END) as f64
    }
}

/// Truth paths of a validated configuration.
pub fn build_scenario(cfg: &ValidatedConfig) -> Result<TruthTrajectory, SimError> {
    let steps = cfg.steps;
    let x = |k: usize| S12_X0 + S12_SPEED * (k - 1) as f64;
    let targets = match cfg.scenario {
        ScenarioId::S1 => {
            vec![from_positions(1, steps, |k| (x(k), s1_y(k))), from_positions(1, steps, |k| (x(k), -s1_y(k)))]
        }
        ScenarioId::S2 => {
            vec![from_positions(1, steps, |k| (x(k), s2_y(k))), from_positions(1, steps, |k| (x(k), -s2_y(k)))]
        }
        ScenarioId::S3 => {
            let t = |k: usize| k as f64 - S3_CROSSING as f64;
            vec![
                from_positions(1, steps, |k| (S12_SPEED * t(k), S3_VY * t(k))),
                from_positions(1, steps, |k| (S12_SPEED * t(k), -S3_VY * t(k))),
            ]
        }
        ScenarioId::Custom => cfg
            .custom_targets
            .iter()
            .map(|c| {
                let s = c.initial;
                from_positions(c.birth, c.death.min(steps), |k| {
                    let dt = (k as f64 - c.birth as f64) * cfg.period;
                    (s.px + s.vx * dt, s.py + s.vy * dt)
                })
            })
            .collect(),
        id => {
            let n = id.circle_targets().expect("remaining scenarios are circle scenarios");
            if steps < S4_BIRTH {
                return Err(SimError::InvalidConfig(format!("{id} needs at least {S4_BIRTH} steps, got {steps}")));
            }
            (0..n)
                .map(|i| {
                    let angle = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                    let (c, s) = (angle.cos(), angle.sin());
                    from_positions(S4_BIRTH, steps, move |k| {
                        let r = S4_RADIUS - S4_SPEED * (k - S4_BIRTH) as f64;
                        (r * c, r * s)
                    })
                })
                .collect()
        }
    };
    if targets.iter().any(|t| t.birth == 0 || t.birth > t.death) {
        return Err(SimError::InvalidConfig("target lifetimes must satisfy 1 <= birth <= death".into()));
    }
    Ok(TruthTrajectory { steps, targets })
}

/// One scan of simulated detections and clutter. Detections that fall
/// outside the region of interest are lost.
pub fn generate_measurements<R: Rng + ?Sized>(
    truth: &TruthTrajectory,
    scan: usize,
    model: &MeasurementModel,
    rng: &mut R,
) -> MeasurementFrame {
    let roi = model.roi();
    let noise = Normal::new(0.0, model.noise_std()).expect("noise std is nonnegative and finite");
    let mut labelled: Vec<(Vector2<f64>, Origin)> = Vec::new();
    for (i, t) in truth.targets.iter().enumerate() {
        let Some(s) = t.state(scan) else { continue };
        if rng.random::<f64>() < model.detection() {
            let z = s.position() + Vector2::new(noise.sample(rng), noise.sample(rng));
            if roi.contains(&z) {
                labelled.push((z, Origin::Target(i)));
            }
        }
    }
    if model.clutter_rate() > 0.0 {
        let count = Poisson::new(model.clutter_rate()).expect("clutter rate is positive").sample(rng) as usize;
        for _ in 0..count {
            let z = Vector2::new(rng.random_range(roi.x_min..roi.x_max), rng.random_range(roi.y_min..roi.y_max));
            labelled.push((z, Origin::Clutter));
        }
    }
    labelled.shuffle(rng);
    let (measurements, origin) = labelled.into_iter().unzip();
    MeasurementFrame { time: scan, measurements, truth_origin: Some(origin) }
}

/// All frames of one run, drawn from the keyed per-scan streams.
pub fn simulate_run(truth: &TruthTrajectory, model: &MeasurementModel, seed: u64, run: u64) -> Vec<MeasurementFrame> {
    (1..=truth.steps)
        .map(|k| generate_measurements(truth, k, model, &mut scan_stream(seed, run, k as u64, Purpose::Measurements)))
        .collect()
}

/// Metrics of one tracker at one scan of one run.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ScanMetrics {
    pub gospa_total: f64,
    pub gospa_loc: f64,
    pub gospa_missed: f64,
    pub gospa_false: f64,
    pub d_tracks: Option<f64>,
    pub d_center: Option<f64>,
}

/// Output of one tracker over one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerRun {
    pub scans: Vec<ScanMetrics>,
    pub seconds: f64,
    pub diagnostics: TrackerDiagnostics,
}

/// Runs one tracker over a run's frames and scores it against the truth.
pub fn run_tracker(
    cfg: &ValidatedConfig,
    truth: &TruthTrajectory,
    kind: TrackerKind,
    run: u64,
    frames: &[MeasurementFrame],
) -> Result<TrackerRun, TrackerError> {
    let known = cfg.known_births.then(|| truth.known_births());
    let params = GospaParams::default();
    let pair = truth.targets.len() == 2;
    let start = Instant::now();
    let mut tracker = kind.build(cfg, run, known);
    let mut scans = Vec::with_capacity(frames.len());
    let mut elapsed = start.elapsed();
    for frame in frames {
        let t0 = Instant::now();
        tracker.step(frame)?;
        let estimates = tracker.estimates();
        elapsed += t0.elapsed();
        let positions: Vec<Vector2<f64>> = estimates.iter().map(|e| e.state.position()).collect();
        let g = gospa(&truth.positions(frame.time), &positions, params).expect("default GOSPA parameters are valid");
        let ys = if pair { matched_pair(&g, &positions).ok() } else { None };
        scans.push(ScanMetrics {
            gospa_total: g.total,
            gospa_loc: g.localization,
            gospa_missed: g.missed,
            gospa_false: g.false_,
            d_tracks: ys.map(d_tracks),
            d_center: ys.map(d_center),
        });
    }
    Ok(TrackerRun { scans, seconds: elapsed.as_secs_f64(), diagnostics: tracker.diagnostics() })
}

/// Per-scan averages of one tracker over the successful runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerCurves {
    pub kind: TrackerKind,
    pub gospa_total: Vec<f64>,
    pub gospa_loc: Vec<f64>,
    pub gospa_missed: Vec<f64>,
    pub gospa_false: Vec<f64>,
    /// Mean over the runs where the separation was defined.
    pub d_tracks: Vec<Option<f64>>,
    pub d_center: Vec<Option<f64>>,
    pub d_samples: Vec<usize>,
    pub runs_ok: usize,
    /// Wall-clock seconds of each successful run, in run order.
    pub runtimes: Vec<f64>,
    pub failures: Vec<(u64, String)>,
    pub diagnostics: TrackerDiagnostics,
}

impl TrackerCurves {
    fn new(kind: TrackerKind, steps: usize) -> Self {
        Self {
            kind,
            gospa_total: vec![0.0; steps],
            gospa_loc: vec![0.0; steps],
            gospa_missed: vec![0.0; steps],
            gospa_false: vec![0.0; steps],
            d_tracks: vec![None; steps],
            d_center: vec![None; steps],
            d_samples: vec![0; steps],
            runs_ok: 0,
            runtimes: Vec::new(),
            failures: Vec::new(),
            diagnostics: TrackerDiagnostics::default(),
        }
    }

    fn accumulate(&mut self, run: &TrackerRun) {
        let add = |acc: &mut Option<f64>, x: Option<f64>| {
            if let Some(x) = x {
                *acc = Some(acc.unwrap_or(0.0) + x);
            }
        };
        for (k, s) in run.scans.iter().enumerate() {
            self.gospa_total[k] += s.gospa_total;
            self.gospa_loc[k] += s.gospa_loc;
            self.gospa_missed[k] += s.gospa_missed;
            self.gospa_false[k] += s.gospa_false;
            add(&mut self.d_tracks[k], s.d_tracks);
            add(&mut self.d_center[k], s.d_center);
            self.d_samples[k] += usize::from(s.d_tracks.is_some());
        }
        self.runs_ok += 1;
        self.runtimes.push(run.seconds);
        let d = &mut self.diagnostics;
        d.enumeration_fallbacks += run.diagnostics.enumeration_fallbacks;
        d.bp_not_converged += run.diagnostics.bp_not_converged;
        d.hypotheses_capped += run.diagnostics.hypotheses_capped;
    }

    fn finish(&mut self) {
        let n = self.runs_ok as f64;
        if self.runs_ok > 0 {
            for v in [&mut self.gospa_total, &mut self.gospa_loc, &mut self.gospa_missed, &mut self.gospa_false] {
                v.iter_mut().for_each(|x| *x /= n);
            }
        }
        for (k, &count) in self.d_samples.iter().enumerate() {
            for v in [&mut self.d_tracks, &mut self.d_center] {
                v[k] = v[k].map(|x| x / count as f64);
            }
        }
    }

    pub fn runtime(&self) -> Option<RuntimeStats> {
        RuntimeStats::from_samples(&self.runtimes)
    }

    /// Mean of `values` over 1-based scans `first..=last`.
    pub fn window_mean(values: &[f64], first: usize, last: usize) -> f64 {
        let slice = &values[first - 1..last];
        slice.iter().sum::<f64>() / slice.len() as f64
    }

    /// Mean of the defined entries of `values` over scans `first..=last`.
    pub fn window_mean_defined(values: &[Option<f64>], first: usize, last: usize) -> Option<f64> {
        let defined: Vec<f64> = values[first - 1..last].iter().flatten().copied().collect();
        (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

/// Aggregated Monte Carlo results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: ScenarioId,
    pub steps: usize,
    pub runs: u64,
    pub seed: u64,
    pub truth_d_tracks: Vec<Option<f64>>,
    pub truth_d_center: Vec<Option<f64>>,
    pub trackers: Vec<TrackerCurves>,
}

fn fmt_value(x: f64) -> String {
    format!("{x}")
}

fn fmt_option(x: Option<f64>) -> String {
    x.map(fmt_value).unwrap_or_default()
}

impl RunReport {
    pub fn curves(&self, kind: TrackerKind) -> Option<&TrackerCurves> {
        self.trackers.iter().find(|c| c.kind == kind)
    }

    /// CSV header: `time`, the truth separations, then eight columns per
    /// tracker.
    pub fn csv_header(&self) -> Vec<String> {
        let mut cols = vec!["time".to_string(), "truth_d_tracks".into(), "truth_d_center".into()];
        for c in &self.trackers {
            for suffix in
                ["gospa_total", "gospa_loc", "gospa_missed", "gospa_false", "d_tracks", "d_center", "d_samples", "runs"]
            {
                cols.push(format!("{}_{suffix}", c.kind.name().replace('-', "_")));
            }
        }
        cols
    }

    /// One row per scan; undefined separations are empty fields.
    pub fn to_csv(&self) -> String {
        let mut out = self.csv_header().join(",");
        out.push('\n');
        for k in 0..self.steps {
            let mut row =
                vec![(k + 1).to_string(), fmt_option(self.truth_d_tracks[k]), fmt_option(self.truth_d_center[k])];
            for c in &self.trackers {
                row.extend([
                    fmt_value(c.gospa_total[k]),
                    fmt_value(c.gospa_loc[k]),
                    fmt_value(c.gospa_missed[k]),
                    fmt_value(c.gospa_false[k]),
                    fmt_option(c.d_tracks[k]),
                    fmt_option(c.d_center[k]),
                    c.d_samples[k].to_string(),
                    c.runs_ok.to_string(),
                ]);
            }
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Runtime statistics, failures and fallback counters per tracker.
    pub fn summary_json(&self) -> serde_json::Value {
        let trackers: serde_json::Map<String, serde_json::Value> = self
            .trackers
            .iter()
            .map(|c| {
                (
                    c.kind.name().to_string(),
                    serde_json::json!({
                        "runs_ok": c.runs_ok,
                        "runtime_seconds": c.runtime(),
                        "failures": c.failures.iter().map(|(run, e)| serde_json::json!({"run": run, "error": e})).collect::<Vec<_>>(),
                        "diagnostics": c.diagnostics,
                    }),
                )
            })
            .collect();
        serde_json::json!({
            "scenario": self.scenario.name(),
            "steps": self.steps,
            "runs": self.runs,
            "seed": self.seed,
            "trackers": trackers,
        })
    }
}

/// Threads for the run pool: `MTT_THREADS` if set to a positive integer,
/// otherwise rayon's default.
pub fn thread_count() -> Option<usize> {
    std::env::var("MTT_THREADS").ok().and_then(|v| v.trim().parse().ok()).filter(|&n: &usize| n > 0)
}

/// Runs every tracker on `runs` independent realizations of the scenario
/// and averages the per-scan metrics. A tracker failure drops that run for
/// that tracker only.
pub fn run_monte_carlo(cfg: &ValidatedConfig, trackers: &[TrackerKind], runs: u64) -> Result<RunReport, SimError> {
    if runs == 0 {
        return Err(SimError::NoRuns);
    }
    let truth = build_scenario(cfg)?;
    let model = MeasurementModel::from_config(cfg);
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count() {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| SimError::ThreadPool(e.to_string()))?;
    let results: Vec<Vec<Result<TrackerRun, TrackerError>>> = pool.install(|| {
        (0..runs)
            .into_par_iter()
            .map(|run| {
                let frames = simulate_run(&truth, &model, cfg.seed, run);
                trackers.iter().map(|&kind| run_tracker(cfg, &truth, kind, run, &frames)).collect()
            })
            .collect()
    });

    let mut curves: Vec<TrackerCurves> = trackers.iter().map(|&k| TrackerCurves::new(k, cfg.steps)).collect();
    for (run, per_tracker) in results.into_iter().enumerate() {
        for (c, result) in curves.iter_mut().zip(per_tracker) {
            match result {
                Ok(r) => c.accumulate(&r),
                Err(e) => {
                    warn!("{} failed on run {run}: {e}", c.kind);
                    c.failures.push((run as u64, e.to_string()));
                }
            }
        }
    }
    curves.iter_mut().for_each(TrackerCurves::finish);
    let truth_pair: Vec<Option<[f64; 2]>> = (1..=cfg.steps).map(|k| truth.pair_ys(k)).collect();
    Ok(RunReport {
        scenario: cfg.scenario,
        steps: cfg.steps,
        runs,
        seed: cfg.seed,
        truth_d_tracks: truth_pair.iter().map(|p| p.map(d_tracks)).collect(),
        truth_d_center: truth_pair.iter().map(|p| p.map(d_center)).collect(),
        trackers: curves,
    })
}
