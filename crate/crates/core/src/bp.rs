//! Belief-propagation tracker with existence probabilities, in Gaussian and
//! particle flavors, plus the exact-marginalization variants.
//!
//! Particle variants keep a potential track Gaussian until it has survived
//! its first update; only then is the (exact) Gaussian-mixture posterior
//! sampled into particles. Short-lived potential tracks spawned from clutter
//! therefore never cost a particle cloud.

use rand_chacha::ChaCha8Rng;

use crate::assoc::{gated_betas, MarginalDA, PredictedBelief};
use crate::config::{TrackerParams, ValidatedConfig};
use crate::jpda::{mixture_components, moment_match, repair_empty_rows, row_weights, solve_marginals, Engine};
use crate::models::{
    particle_reweight, predict, predict_particles, resample, sample_mixture, MeasurementModel, ModelError, MotionModel,
};
use crate::tracker::{birth_belief, KnownBirth, TrackEstimate, Tracker, TrackerDiagnostics, TrackerError, TrackerKind};
use crate::types::{
    AssociationProblem, Belief, GaussianBelief, KinematicState, MeasurementFrame, ParticleBelief, PotentialTrack,
    TrackStatus,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BpVariant {
    PartBp,
    GaussBp,
    PartEx,
    GaussEx,
}

impl BpVariant {
    pub fn particles(&self) -> bool {
        matches!(self, BpVariant::PartBp | BpVariant::PartEx)
    }

    pub(crate) fn engine(&self) -> Engine {
        match self {
            BpVariant::PartBp | BpVariant::GaussBp => Engine::Bp,
            BpVariant::PartEx | BpVariant::GaussEx => Engine::Exact,
        }
    }

    pub fn kind(&self) -> TrackerKind {
        match self {
            BpVariant::PartBp => TrackerKind::BpPart,
            BpVariant::GaussBp => TrackerKind::BpGauss,
            BpVariant::PartEx => TrackerKind::ExPart,
            BpVariant::GaussEx => TrackerKind::ExGauss,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BpState {
    pub tracks: Vec<PotentialTrack>,
    pub time: usize,
    pub variant: BpVariant,
    pub particle_count: usize,
    next_label: u64,
}

impl BpState {
    pub fn new(variant: BpVariant, particle_count: usize) -> Self {
        Self { tracks: Vec::new(), time: 0, variant, particle_count, next_label: 0 }
    }

    /// Adds a potential track at the current time and returns its label.
    pub fn add_track(&mut self, existence: f64, belief: Belief) -> u64 {
        let label = self.next_label;
        self.next_label += 1;
        self.tracks.push(PotentialTrack::new(label, existence, belief, 1, self.time));
        label
    }
}

/// Model-level inputs of a step.
#[derive(Debug, Clone)]
pub struct BpModels<'a> {
    pub motion: &'a MotionModel,
    pub measurement: &'a MeasurementModel,
    pub params: &'a TrackerParams,
    /// Whether new potential tracks are spawned and weak ones pruned.
    pub managed: bool,
}

/// Weight of a new potential track relative to clutter such that a
/// measurement explained by nothing else yields existence `birth`.
fn new_track_mass(birth: f64) -> f64 {
    birth / (1.0 - birth)
}

/// Posterior of a potential track after association.
enum Posterior {
    /// Gaussian mixture components, normalized.
    Mixture(Vec<(f64, GaussianBelief)>),
    Particles(ParticleBelief),
}

fn particle_posterior(
    predicted: &ParticleBelief,
    frame: &MeasurementFrame,
    model: &MeasurementModel,
    weights: &[(usize, f64)],
) -> ParticleBelief {
    let mut acc = vec![0.0; predicted.len()];
    for &(col, w) in weights {
        if col == 0 {
            for (a, pw) in acc.iter_mut().zip(predicted.weights()) {
                *a += w * pw;
            }
        } else {
            let terms = particle_reweight(predicted, &frame.measurements[col - 1], model);
            let total: f64 = terms.iter().sum();
            if total > 0.0 {
                for (a, t) in acc.iter_mut().zip(&terms) {
                    *a += w * t / total;
                }
            }
        }
    }
    ParticleBelief::from_unnormalized(predicted.states().to_vec(), acc)
}

/// One recursion: predict, associate, update, spawn and prune.
pub fn bp_step(
    state: &mut BpState,
    frame: &MeasurementFrame,
    models: &BpModels<'_>,
    rng: &mut ChaCha8Rng,
    diag: &mut TrackerDiagnostics,
) -> Result<MarginalDA, TrackerError> {
    state.time = frame.time;
    let p_d = models.measurement.detection();
    let survival = models.motion.survival();

    for track in state.tracks.iter_mut().filter(|t| t.birth_time < frame.time) {
        track.existence *= survival;
        track.belief = match &track.belief {
            Belief::Gaussian(g) => Belief::Gaussian(predict(g, models.motion)),
            Belief::Particles(p) => Belief::Particles(predict_particles(p, models.motion, rng)),
        };
    }

    let beliefs: Vec<&Belief> = state.tracks.iter().map(|t| &t.belief).collect();
    let base = gated_betas(&beliefs, frame, models.measurement, models.params.gate_threshold)?;
    let mut beta = base.beta().clone();
    for (j, track) in state.tracks.iter().enumerate() {
        let e = track.existence;
        for m in 1..beta.ncols() {
            beta[(j, m)] *= e;
        }
        beta[(j, 0)] = e * (1.0 - p_d) + (1.0 - e);
    }
    let scale = if models.managed { 1.0 + new_track_mass(models.params.birth_existence) } else { 1.0 };
    let xi0 = base.xi0().iter().map(|x| x * scale).collect();
    let mut problem = AssociationProblem::unchecked(beta, xi0).expect("weights are nonnegative");
    repair_empty_rows(&mut problem);
    let marginals = solve_marginals(&problem, state.variant.engine(), models.params, diag)?;

    let mut posteriors = Vec::with_capacity(state.tracks.len());
    for (j, track) in state.tracks.iter_mut().enumerate() {
        let e = track.existence;
        let missed_alive = e * (1.0 - p_d);
        let miss_total = missed_alive + (1.0 - e);
        let alive_given_miss = if miss_total > 0.0 { missed_alive / miss_total } else { 0.0 };
        let p0 = marginals.get(j, 0);
        let not_alive_given_miss = if miss_total > 0.0 { (1.0 - e) / miss_total } else { 1.0 };
        track.existence = 1.0 - p0 * not_alive_given_miss;
        debug_assert!((0.0..=1.0).contains(&track.existence), "existence {}", track.existence);
        let mut weights = row_weights(&marginals, j);
        if let Some(first) = weights.first_mut().filter(|(c, _)| *c == 0) {
            first.1 *= alive_given_miss;
        }
        weights.retain(|(_, w)| *w > 0.0);
        let posterior = if weights.is_empty() {
            // Nonexistence is certain; the belief no longer matters.
            Posterior::Mixture(vec![(1.0, track.belief.gaussian_approx())])
        } else {
            match &track.belief {
                Belief::Gaussian(g) => {
                    let innovation = g.innovation(models.measurement)?;
                    Posterior::Mixture(mixture_components(g, &innovation, frame, models.measurement, &weights))
                }
                Belief::Particles(p) => {
                    Posterior::Particles(particle_posterior(p, frame, models.measurement, &weights))
                }
            }
        };
        posteriors.push(posterior);
    }

    let particles = state.variant.particles();
    let mut kept = Vec::with_capacity(state.tracks.len());
    for (mut track, posterior) in std::mem::take(&mut state.tracks).into_iter().zip(posteriors) {
        if models.managed && track.existence < models.params.prune_threshold {
            continue;
        }
        track.belief = match posterior {
            Posterior::Mixture(components) if particles => {
                Belief::Particles(sample_mixture(&components, state.particle_count, rng)?)
            }
            Posterior::Mixture(components) => Belief::Gaussian(moment_match(&components)),
            Posterior::Particles(p) => Belief::Particles(resample(&p, state.particle_count, rng)?),
        };
        kept.push(track);
    }
    state.tracks = kept;

    if models.managed {
        for z in &frame.measurements {
            let belief = birth_belief(z, models.measurement.noise_std(), models.params.new_velocity_std);
            state.add_track(models.params.birth_existence, Belief::Gaussian(belief));
        }
        prune_tracks(state, models.params.prune_threshold);
    }
    Ok(marginals)
}

/// MMSE estimates of potential tracks whose existence exceeds `threshold`.
pub fn detect_and_estimate(state: &BpState, threshold: f64) -> Vec<(u64, KinematicState)> {
    state
        .tracks
        .iter()
        .filter(|t| t.existence > threshold)
        .map(|t| (t.label, KinematicState::from_vector(&t.belief.mean())))
        .collect()
}

/// Removes potential tracks with existence below `threshold`.
pub fn prune_tracks(state: &mut BpState, threshold: f64) {
    state.tracks.retain(|t| t.existence >= threshold);
}

pub struct BpTracker {
    state: BpState,
    motion: MotionModel,
    measurement: MeasurementModel,
    params: TrackerParams,
    known: Option<Vec<KnownBirth>>,
    rng: ChaCha8Rng,
    diag: TrackerDiagnostics,
}

impl BpTracker {
    pub fn new(cfg: &ValidatedConfig, variant: BpVariant, known: Option<Vec<KnownBirth>>, rng: ChaCha8Rng) -> Self {
        let mut motion = MotionModel::from_config(cfg);
        if known.is_some() {
            motion = motion.with_survival(1.0);
        }
        Self {
            state: BpState::new(variant, cfg.tracker.particles),
            motion,
            measurement: MeasurementModel::from_config(cfg),
            params: cfg.tracker.clone(),
            known,
            rng,
            diag: TrackerDiagnostics::default(),
        }
    }

    pub fn state(&self) -> &BpState {
        &self.state
    }

    fn spawn_known(&mut self, time: usize) -> Result<(), ModelError> {
        let Some(known) = &self.known else { return Ok(()) };
        self.state.time = time;
        for birth in known.iter().filter(|b| b.time == time) {
            let g = birth_belief(&birth.position, self.measurement.noise_std(), self.params.new_velocity_std);
            let belief = if self.state.variant.particles() {
                Belief::Particles(sample_mixture(&[(1.0, g)], self.state.particle_count, &mut self.rng)?)
            } else {
                Belief::Gaussian(g)
            };
            let label = self.state.add_track(1.0, belief);
            let track = self.state.tracks.iter_mut().find(|t| t.label == label).expect("just added");
            track.status = TrackStatus::Confirmed;
        }
        Ok(())
    }
}

impl Tracker for BpTracker {
    fn kind(&self) -> TrackerKind {
        self.state.variant.kind()
    }

    fn step(&mut self, frame: &MeasurementFrame) -> Result<(), TrackerError> {
        self.spawn_known(frame.time)?;
        let models = BpModels {
            motion: &self.motion,
            measurement: &self.measurement,
            params: &self.params,
            managed: self.known.is_none(),
        };
        bp_step(&mut self.state, frame, &models, &mut self.rng, &mut self.diag)?;
        Ok(())
    }

    fn estimates(&self) -> Vec<TrackEstimate> {
        detect_and_estimate(&self.state, self.params.existence_threshold)
            .into_iter()
            .map(|(label, state)| TrackEstimate { label, state })
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
    use nalgebra::{Matrix4, Vector4};
    use rand::SeedableRng;

    fn models_for(cfg: &ValidatedConfig) -> (MotionModel, MeasurementModel) {
        (MotionModel::from_config(cfg), MeasurementModel::from_config(cfg))
    }

    #[test]
    fn existence_after_missed_scan() {
        let cfg = ValidatedConfig::for_scenario(ScenarioId::S1);
        let (motion, meas) = models_for(&cfg);
        let mut state = BpState::new(BpVariant::GaussBp, 10);
        let g = GaussianBelief::new(Vector4::zeros(), Matrix4::identity()).unwrap();
        state.add_track(1.0, Belief::Gaussian(g));
        let models = BpModels { motion: &motion, measurement: &meas, params: &cfg.tracker, managed: false };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut diag = TrackerDiagnostics::default();
        bp_step(&mut state, &MeasurementFrame::new(1, vec![]), &models, &mut rng, &mut diag).unwrap();
        let predicted: f64 = 0.995;
        let expected = predicted * 0.5 / (predicted * 0.5 + 0.005);
        assert!((state.tracks[0].existence - expected).abs() < 1e-12);
        assert!((expected - 0.990049751).abs() < 1e-9);
    }

    #[test]
    fn detection_threshold_edge() {
        let mut state = BpState::new(BpVariant::GaussBp, 10);
        let g = GaussianBelief::new(Vector4::new(1.0, 2.0, 3.0, 4.0), Matrix4::identity()).unwrap();
        state.add_track(0.49, Belief::Gaussian(g.clone()));
        state.add_track(0.51, Belief::Gaussian(g));
        let out = detect_and_estimate(&state, 0.5);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].0, 1);
        assert_eq!(out[0].1, KinematicState::new(1.0, 2.0, 3.0, 4.0));
    }

    #[test]
    fn symmetric_particles_estimate_zero() {
        let mut state = BpState::new(BpVariant::PartBp, 2);
        let p =
            ParticleBelief::uniform(vec![Vector4::new(1.0, 0.0, 0.0, 0.0), Vector4::new(-1.0, 0.0, 0.0, 0.0)]).unwrap();
        state.add_track(1.0, Belief::Particles(p));
        assert_eq!(detect_and_estimate(&state, 0.5)[0].1.px, 0.0);
    }

    #[test]
    fn pruning() {
        let mut state = BpState::new(BpVariant::GaussBp, 10);
        prune_tracks(&mut state, 1e-4);
        assert!(state.tracks.is_empty());
        let g = GaussianBelief::new(Vector4::zeros(), Matrix4::identity()).unwrap();
        state.add_track(5e-5, Belief::Gaussian(g.clone()));
        state.add_track(1e-3, Belief::Gaussian(g));
        let before = state.clone();
        prune_tracks(&mut state, 0.0);
        assert_eq!(state, before);
        prune_tracks(&mut state, 1e-4);
        assert_eq!(state.tracks.len(), 1);
        assert_eq!(state.tracks[0].label, 1);
    }
}
