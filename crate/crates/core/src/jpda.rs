//! JPDA and JPDA* filters with M/N track management.

use std::collections::BTreeMap;

use log::debug;
use nalgebra::{DMatrix, Matrix4, Vector4};

use crate::assoc::{
    bp_marginals, cluster, enumerate_events, exact_marginals, gated_betas, scatter_marginals, AssocError,
    AssociationEvent, BpOptions, MarginalDA,
};
use crate::config::{TrackerParams, ValidatedConfig};
use crate::models::{predict, update_with, Innovation, MeasurementModel, ModelError, MotionModel};
use crate::tracker::{birth_belief, KnownBirth, TrackEstimate, Tracker, TrackerDiagnostics, TrackerError, TrackerKind};
use crate::types::{AssociationProblem, Belief, GaussianBelief, MeasurementFrame, PotentialTrack, TrackStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JpdaMode {
    Jpda,
    JpdaStar,
}

/// How per-cluster marginals are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Engine {
    Exact,
    ExactPruned,
    Bp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JpdaState {
    pub tracks: Vec<PotentialTrack>,
    pub time: usize,
    pub mode: JpdaMode,
    next_label: u64,
}

impl JpdaState {
    pub fn new(mode: JpdaMode) -> Self {
        Self { tracks: Vec::new(), time: 0, mode, next_label: 0 }
    }

    /// Adds a track and returns its label.
    pub fn add_track(&mut self, belief: GaussianBelief, window: usize, status: TrackStatus) -> u64 {
        let label = self.next_label;
        self.next_label += 1;
        let mut track = PotentialTrack::new(label, 1.0, Belief::Gaussian(belief), window, self.time);
        track.status = status;
        self.tracks.push(track);
        label
    }
}

fn gaussian(track: &PotentialTrack) -> &GaussianBelief {
    track.belief.as_gaussian().expect("JPDA tracks are Gaussian")
}

/// Keeps one event per permutation class: events that detect the same set
/// of targets with the same set of measurements differ only in which
/// target took which measurement, and only the heaviest survives (ties go to
/// the lexicographically smallest event). Output is in event order.
pub fn jpda_star_prune(events: Vec<(AssociationEvent, f64)>) -> Vec<(AssociationEvent, f64)> {
    let mut best: BTreeMap<(Vec<usize>, Vec<usize>), (AssociationEvent, f64)> = BTreeMap::new();
    for (event, w) in events {
        let detected: Vec<usize> = event.0.iter().enumerate().filter(|(_, m)| **m > 0).map(|(j, _)| j).collect();
        let mut used: Vec<usize> = event.0.iter().copied().filter(|m| *m > 0).collect();
        used.sort_unstable();
        let slot = best.entry((detected, used)).or_insert_with(|| (event.clone(), w));
        if w > slot.1 || (w == slot.1 && event < slot.0) {
            *slot = (event, w);
        }
    }
    let mut out: Vec<_> = best.into_values().collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

fn marginals_from_events(
    events: &[(AssociationEvent, f64)],
    targets: usize,
    cols: usize,
) -> Result<MarginalDA, AssocError> {
    let mut acc = DMatrix::zeros(targets, cols);
    let mut total = 0.0;
    for (event, w) in events {
        total += w;
        for (j, &m) in event.0.iter().enumerate() {
            acc[(j, m)] += w;
        }
    }
    if !(total > 0.0 && total.is_finite()) {
        return Err(AssocError::Degenerate);
    }
    Ok(MarginalDA::from_probs(acc / total))
}

fn bp_fallback(
    problem: &AssociationProblem,
    params: &TrackerParams,
    diag: &mut TrackerDiagnostics,
) -> Result<MarginalDA, AssocError> {
    let opts = BpOptions {
        tolerance: params.bp_tolerance,
        max_iterations: params.bp_max_iterations,
        damping: params.bp_damping,
    };
    match bp_marginals(problem, opts) {
        Ok((m, _)) => Ok(m),
        Err(AssocError::NoConvergence { last, .. }) => {
            diag.bp_not_converged += 1;
            Ok(*last)
        }
        Err(e) => Err(e),
    }
}

fn cluster_marginals(
    problem: &AssociationProblem,
    engine: Engine,
    params: &TrackerParams,
    diag: &mut TrackerDiagnostics,
) -> Result<MarginalDA, AssocError> {
    let guard = params.enumeration_guard;
    let exact = match engine {
        Engine::Bp => return bp_fallback(problem, params, diag),
        Engine::Exact => exact_marginals(problem, guard),
        Engine::ExactPruned => enumerate_events(problem, guard).and_then(|events| {
            marginals_from_events(&jpda_star_prune(events), problem.targets(), problem.measurements() + 1)
        }),
    };
    match exact {
        Err(AssocError::TooLarge { events, .. }) => {
            debug!(
                "cluster with {} targets and {} measurements ({events:e} events) falls back to BP",
                problem.targets(),
                problem.measurements()
            );
            diag.enumeration_fallbacks += 1;
            bp_fallback(problem, params, diag)
        }
        other => other,
    }
}

/// Marginal association pmfs of a full problem, solved cluster by cluster.
pub(crate) fn solve_marginals(
    problem: &AssociationProblem,
    engine: Engine,
    params: &TrackerParams,
    diag: &mut TrackerDiagnostics,
) -> Result<MarginalDA, AssocError> {
    let clusters = cluster(problem);
    let mut marginals = Vec::with_capacity(clusters.len());
    for c in &clusters {
        if c.targets.is_empty() {
            marginals.push(MarginalDA::from_probs(DMatrix::zeros(0, c.measurements.len() + 1)));
        } else {
            marginals.push(cluster_marginals(&c.problem, engine, params, diag)?);
        }
    }
    Ok(scatter_marginals(problem.targets(), problem.measurements(), &clusters, &marginals))
}

/// A row without any positive weight (certain detection but nothing in the
/// gate) gets a vanishing miss weight so the problem stays well posed.
pub(crate) fn repair_empty_rows(problem: &mut AssociationProblem) {
    let beta = problem.beta_mut();
    for j in 0..beta.nrows() {
        if beta.row(j).iter().all(|b| *b <= 0.0) {
            beta[(j, 0)] = f64::MIN_POSITIVE;
        }
    }
}

/// Moment-matched Gaussian of the mixture `sum_col w[col] f(x | a = col)`,
/// where column 0 is the predicted belief and column `m` its Kalman update
/// with measurement `m`. Weights are normalized here.
pub(crate) fn mixture_posterior(
    predicted: &GaussianBelief,
    innovation: &Innovation,
    frame: &MeasurementFrame,
    model: &MeasurementModel,
    weights: &[(usize, f64)],
) -> GaussianBelief {
    let components = mixture_components(predicted, innovation, frame, model, weights);
    moment_match(&components)
}

/// Normalized mixture components with nonzero weight.
pub(crate) fn mixture_components(
    predicted: &GaussianBelief,
    innovation: &Innovation,
    frame: &MeasurementFrame,
    model: &MeasurementModel,
    weights: &[(usize, f64)],
) -> Vec<(f64, GaussianBelief)> {
    let total: f64 = weights.iter().map(|(_, w)| w).sum();
    weights
        .iter()
        .filter(|(_, w)| *w > 0.0)
        .map(|&(col, w)| {
            let belief = if col == 0 {
                predicted.clone()
            } else {
                update_with(predicted, innovation, &frame.measurements[col - 1], model)
            };
            (w / total, belief)
        })
        .collect()
}

pub(crate) fn moment_match(components: &[(f64, GaussianBelief)]) -> GaussianBelief {
    if let [(_, only)] = components {
        return only.clone();
    }
    let mean = components.iter().fold(Vector4::zeros(), |acc, (w, g)| acc + g.mean() * *w);
    let cov = components.iter().fold(Matrix4::zeros(), |acc, (w, g)| {
        let d = g.mean() - mean;
        acc + (g.cov() + d * d.transpose()) * *w
    });
    GaussianBelief::from_trusted(mean, cov)
}

/// Row `j` of a marginal as sparse `(column, probability)` pairs.
pub(crate) fn row_weights(marginals: &MarginalDA, j: usize) -> Vec<(usize, f64)> {
    (0..marginals.columns()).map(|c| (c, marginals.get(j, c))).filter(|(_, p)| *p > 0.0).collect()
}

/// Model-level inputs of a step.
#[derive(Debug, Clone)]
pub struct JpdaModels<'a> {
    pub motion: &'a MotionModel,
    pub measurement: &'a MeasurementModel,
    pub params: &'a TrackerParams,
    /// Whether M/N initiation and termination run.
    pub managed: bool,
}

/// Predict, associate and update every track of `state`, then run M/N
/// management when enabled.
pub fn jpda_step(
    state: &mut JpdaState,
    frame: &MeasurementFrame,
    models: &JpdaModels<'_>,
    diag: &mut TrackerDiagnostics,
) -> Result<MarginalDA, TrackerError> {
    state.time = frame.time;
    // Tracks born at this scan already describe it and are not predicted.
    let predicted: Vec<GaussianBelief> = state
        .tracks
        .iter()
        .map(|t| if t.birth_time < frame.time { predict(gaussian(t), models.motion) } else { gaussian(t).clone() })
        .collect();
    let innovations =
        predicted.iter().map(|p| Innovation::new(p, models.measurement)).collect::<Result<Vec<_>, ModelError>>()?;
    let mut problem = gated_betas(&predicted, frame, models.measurement, models.params.gate_threshold)?;
    let in_confirmed_gate: Vec<bool> = frame
        .measurements
        .iter()
        .map(|z| {
            state.tracks.iter().zip(&innovations).any(|(t, inn)| {
                t.status == TrackStatus::Confirmed && inn.mahalanobis2(z) <= models.params.gate_threshold
            })
        })
        .collect();
    if models.managed {
        // Tentative tracks only compete for measurements that no confirmed
        // track can claim.
        for (j, t) in state.tracks.iter().enumerate() {
            if t.status != TrackStatus::Confirmed {
                for (m, _) in in_confirmed_gate.iter().enumerate().filter(|(_, g)| **g) {
                    problem.beta_mut()[(j, m + 1)] = 0.0;
                }
            }
        }
    }
    repair_empty_rows(&mut problem);
    let engine = match state.mode {
        JpdaMode::Jpda => Engine::Exact,
        JpdaMode::JpdaStar => Engine::ExactPruned,
    };
    let marginals = solve_marginals(&problem, engine, models.params, diag)?;
    for (j, track) in state.tracks.iter_mut().enumerate() {
        let weights = row_weights(&marginals, j);
        let posterior = mixture_posterior(&predicted[j], &innovations[j], frame, models.measurement, &weights);
        track.belief = Belief::Gaussian(posterior);
    }
    if models.managed {
        let hits: Vec<bool> =
            (0..state.tracks.len()).map(|j| marginals.detection_probability(j) > models.params.hit_threshold).collect();
        let unassociated: Vec<usize> =
            (0..frame.len()).filter(|&m| marginals.measurement_mass(m + 1) < 0.5 && !in_confirmed_gate[m]).collect();
        mn_manage(state, frame, &hits, &unassociated, models.params, models.measurement.noise_std());
    }
    Ok(marginals)
}

/// M/N confirmation, termination after consecutive misses, and initiation of
/// tentative tracks from unassociated measurements. `hits[j]` refers to
/// `state.tracks[j]`.
pub fn mn_manage(
    state: &mut JpdaState,
    frame: &MeasurementFrame,
    hits: &[bool],
    unassociated: &[usize],
    params: &TrackerParams,
    sigma_v: f64,
) {
    let rule = params.jpda_confirm;
    for (track, &hit) in state.tracks.iter_mut().zip(hits) {
        track.hits.push(hit);
        if track.status == TrackStatus::Tentative && track.hits.count() >= rule.m {
            track.status = TrackStatus::Confirmed;
        }
        if track.hits.consecutive_misses() >= params.termination_misses {
            track.status = TrackStatus::Terminated;
        }
    }
    state.tracks.retain(|t| t.status != TrackStatus::Terminated);
    for &m in unassociated {
        let belief = birth_belief(&frame.measurements[m], sigma_v, params.new_velocity_std);
        state.add_track(belief, rule.n, TrackStatus::Tentative);
        let track = state.tracks.last_mut().expect("just added");
        track.hits.push(true);
        if rule.m <= 1 {
            track.status = TrackStatus::Confirmed;
        }
    }
}

/// JPDA or JPDA* tracker.
pub struct JpdaTracker {
    state: JpdaState,
    motion: MotionModel,
    measurement: MeasurementModel,
    params: TrackerParams,
    known: Option<Vec<KnownBirth>>,
    diag: TrackerDiagnostics,
}

impl JpdaTracker {
    pub fn new(cfg: &ValidatedConfig, mode: JpdaMode, known: Option<Vec<KnownBirth>>) -> Self {
        let mut motion = MotionModel::from_config(cfg);
        if known.is_some() {
            motion = motion.with_survival(1.0);
        }
        Self {
            state: JpdaState::new(mode),
            motion,
            measurement: MeasurementModel::from_config(cfg),
            params: cfg.tracker.clone(),
            known,
            diag: TrackerDiagnostics::default(),
        }
    }

    pub fn state(&self) -> &JpdaState {
        &self.state
    }

    fn spawn_known(&mut self, time: usize) {
        let Some(known) = &self.known else { return };
        for birth in known.iter().filter(|b| b.time == time) {
            let belief = birth_belief(&birth.position, self.measurement.noise_std(), self.params.new_velocity_std);
            self.state.time = time;
            self.state.add_track(belief, self.params.jpda_confirm.n, TrackStatus::Confirmed);
        }
    }
}

impl Tracker for JpdaTracker {
    fn kind(&self) -> TrackerKind {
        match self.state.mode {
            JpdaMode::Jpda => TrackerKind::Jpda,
            JpdaMode::JpdaStar => TrackerKind::JpdaStar,
        }
    }

    fn step(&mut self, frame: &MeasurementFrame) -> Result<(), TrackerError> {
        self.spawn_known(frame.time);
        let models = JpdaModels {
            motion: &self.motion,
            measurement: &self.measurement,
            params: &self.params,
            managed: self.known.is_none(),
        };
        jpda_step(&mut self.state, frame, &models, &mut self.diag)?;
        Ok(())
    }

    fn estimates(&self) -> Vec<TrackEstimate> {
        self.state
            .tracks
            .iter()
            .filter(|t| t.status == TrackStatus::Confirmed)
            .map(|t| TrackEstimate { label: t.label, state: gaussian(t).state() })
            .collect()
    }

    fn diagnostics(&self) -> TrackerDiagnostics {
        self.diag
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ScenarioId;

    fn ev(a: &[usize], w: f64) -> (AssociationEvent, f64) {
        (AssociationEvent(a.to_vec()), w)
    }

    #[test]
    fn star_prune_symmetric_pair() {
        let out = jpda_star_prune(vec![ev(&[2, 1], 0.4), ev(&[1, 2], 0.4)]);
        assert_eq!(out, vec![ev(&[1, 2], 0.4)]);
        assert_eq!(jpda_star_prune(vec![ev(&[0, 3], 0.1)]), vec![ev(&[0, 3], 0.1)]);
    }

    #[test]
    fn star_prune_keeps_heaviest() {
        let out = jpda_star_prune(vec![ev(&[1, 2], 0.1), ev(&[2, 1], 0.3), ev(&[1, 0], 0.2), ev(&[0, 1], 0.5)]);
        assert_eq!(out, vec![ev(&[0, 1], 0.5), ev(&[1, 0], 0.2), ev(&[2, 1], 0.3)]);
    }

    fn manage_fixture() -> (JpdaState, TrackerParams) {
        let mut state = JpdaState::new(JpdaMode::Jpda);
        let params = ValidatedConfig::for_scenario(ScenarioId::S1).tracker;
        let b = birth_belief(&nalgebra::Vector2::zeros(), 10.0, 20.0);
        state.add_track(b, params.jpda_confirm.n, TrackStatus::Tentative);
        (state, params)
    }

    #[test]
    fn confirmation_after_twelve_hits() {
        let (mut state, params) = manage_fixture();
        let frame = MeasurementFrame::new(0, vec![]);
        for scan in 1..=12 {
            assert_eq!(state.tracks[0].status, TrackStatus::Tentative, "scan {scan}");
            mn_manage(&mut state, &frame, &[true], &[], &params, 10.0);
        }
        assert_eq!(state.tracks[0].status, TrackStatus::Confirmed);
    }

    #[test]
    fn termination_after_six_misses() {
        let (mut state, params) = manage_fixture();
        let frame = MeasurementFrame::new(0, vec![]);
        for _ in 0..5 {
            mn_manage(&mut state, &frame, &[false], &[], &params, 10.0);
        }
        assert_eq!(state.tracks.len(), 1);
        mn_manage(&mut state, &frame, &[false], &[], &params, 10.0);
        assert!(state.tracks.is_empty());
    }

    #[test]
    fn no_unassociated_no_new_tracks() {
        let (mut state, params) = manage_fixture();
        let frame = MeasurementFrame::new(0, vec![nalgebra::Vector2::new(1.0, 1.0)]);
        mn_manage(&mut state, &frame, &[true], &[], &params, 10.0);
        assert_eq!(state.tracks.len(), 1);
        mn_manage(&mut state, &frame, &[true], &[0], &params, 10.0);
        assert_eq!(state.tracks.len(), 2);
        assert_eq!(state.tracks[1].label, 1);
    }
}
