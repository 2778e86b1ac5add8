//! Domain types shared by every tracker.

use std::collections::VecDeque;
use std::hash::{Hash, Hasher};

use nalgebra::{DMatrix, Matrix4, Vector2, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative tolerance used by the covariance symmetry check.
pub const SYMMETRY_TOL: f64 = 1e-9;
/// Eigenvalues may dip this far below zero (relative to the trace).
pub const PSD_TOL: f64 = 1e-9;
/// Tolerance on the particle weight sum.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BeliefError {
    #[error("belief contains a non-finite value")]
    NonFinite,
    #[error("covariance is not symmetric (max asymmetry {0:e})")]
    Asymmetric(f64),
    #[error("covariance is not positive semidefinite (min eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("particle belief is empty")]
    Empty,
    #[error("particle weights invalid: {0}")]
    BadWeights(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("beta matrix must have at least one column")]
    NoMissColumn,
    #[error("xi0 has {got} entries, expected {expected}")]
    XiLength { expected: usize, got: usize },
    #[error("entry ({row}, {col}) is negative or non-finite: {value}")]
    BadEntry { row: usize, col: usize, value: f64 },
    #[error("xi0[{index}] is negative or non-finite: {value}")]
    BadXi { index: usize, value: f64 },
    #[error("row {0} has no strictly positive entry")]
    EmptyRow(usize),
}

/// Position and velocity in the plane, SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KinematicState {
    pub px: f64,
    pub py: f64,
    pub vx: f64,
    pub vy: f64,
}

impl KinematicState {
    pub fn new(px: f64, py: f64, vx: f64, vy: f64) -> Self {
        Self { px, py, vx, vy }
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn to_vector(&self) -> Vector4<f64> {
        Vector4::new(self.px, self.py, self.vx, self.vy)
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.px, self.py)
    }

    pub fn is_finite(&self) -> bool {
        self.px.is_finite() && self.py.is_finite() && self.vx.is_finite() && self.vy.is_finite()
    }
}

/// Gaussian posterior of a single potential target.
///
/// Construction through [`GaussianBelief::new`] checks symmetry and positive
/// semidefiniteness. Filter internals build beliefs with
/// [`GaussianBelief::from_trusted`], which symmetrizes and only checks in
/// debug builds.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    mean: Vector4<f64>,
    cov: Matrix4<f64>,
}

impl GaussianBelief {
    pub fn new(mean: Vector4<f64>, cov: Matrix4<f64>) -> Result<Self, BeliefError> {
        if mean.iter().chain(cov.iter()).any(|x| !x.is_finite()) {
            return Err(BeliefError::NonFinite);
        }
        let scale = cov.amax().max(f64::MIN_POSITIVE);
        let asym = (cov - cov.transpose()).amax();
        if asym > SYMMETRY_TOL * scale {
            return Err(BeliefError::Asymmetric(asym));
        }
        let sym = symmetrize(&cov);
        let min_eig = sym.symmetric_eigenvalues().min();
        if min_eig < -PSD_TOL * sym.trace().abs() {
            return Err(BeliefError::NotPsd(min_eig));
        }
        Ok(Self { mean, cov: sym })
    }

    pub fn from_state(state: KinematicState, cov: Matrix4<f64>) -> Result<Self, BeliefError> {
        Self::new(state.to_vector(), cov)
    }

    /// Builds a belief from filter arithmetic that preserves PSD by construction.
    pub fn from_trusted(mean: Vector4<f64>, cov: Matrix4<f64>) -> Self {
        let cov = symmetrize(&cov);
        debug_assert!(Self::new(mean, cov).is_ok(), "filter produced an invalid belief: mean {mean:?} cov {cov:?}");
        Self { mean, cov }
    }

    pub fn mean(&self) -> &Vector4<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &Matrix4<f64> {
        &self.cov
    }

    pub fn state(&self) -> KinematicState {
        KinematicState::from_vector(&self.mean)
    }
}

pub(crate) fn symmetrize(m: &Matrix4<f64>) -> Matrix4<f64> {
    (m + m.transpose()) * 0.5
}

/// Weighted particle representation of a single-target posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleBelief {
    states: Vec<Vector4<f64>>,
    weights: Vec<f64>,
}

impl ParticleBelief {
    pub fn new(states: Vec<Vector4<f64>>, weights: Vec<f64>) -> Result<Self, BeliefError> {
        if states.is_empty() {
            return Err(BeliefError::Empty);
        }
        if states.len() != weights.len() {
            return Err(BeliefError::BadWeights(format!("{} particles but {} weights", states.len(), weights.len())));
        }
        if states.iter().any(|s| s.iter().any(|x| !x.is_finite())) {
            return Err(BeliefError::NonFinite);
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(BeliefError::BadWeights("negative or non-finite weight".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(BeliefError::BadWeights(format!("weights sum to {sum}")));
        }
        Ok(Self { states, weights })
    }

    pub fn uniform(states: Vec<Vector4<f64>>) -> Result<Self, BeliefError> {
        let n = states.len();
        Self::new(states, vec![1.0 / n.max(1) as f64; n])
    }

    /// Normalizes arbitrary nonnegative weights. Used by the particle updates.
    pub(crate) fn from_unnormalized(states: Vec<Vector4<f64>>, mut weights: Vec<f64>) -> Self {
        let sum: f64 = weights.iter().sum();
        debug_assert!(sum > 0.0 && sum.is_finite());
        for w in &mut weights {
            *w /= sum;
        }
        Self { states, weights }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[Vector4<f64>] {
        &self.states
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self) -> Vector4<f64> {
        self.states.iter().zip(&self.weights).fold(Vector4::zeros(), |acc, (s, w)| acc + s * *w)
    }

    /// Moment-matched Gaussian.
    pub fn moments(&self) -> GaussianBelief {
        let mean = self.mean();
        let mut cov = Matrix4::zeros();
        for (s, w) in self.states.iter().zip(&self.weights) {
            let d = s - mean;
            cov += d * d.transpose() * *w;
        }
        GaussianBelief::from_trusted(mean, cov)
    }
}

/// Either belief representation. Particle trackers may hold a PT as
/// Gaussian until its first update it survives.
#[derive(Debug, Clone, PartialEq)]
pub enum Belief {
    Gaussian(GaussianBelief),
    Particles(ParticleBelief),
}

impl Belief {
    pub fn mean(&self) -> Vector4<f64> {
        match self {
            Belief::Gaussian(g) => *g.mean(),
            Belief::Particles(p) => p.mean(),
        }
    }

    pub fn gaussian_approx(&self) -> GaussianBelief {
        match self {
            Belief::Gaussian(g) => g.clone(),
            Belief::Particles(p) => p.moments(),
        }
    }

    pub fn as_gaussian(&self) -> Option<&GaussianBelief> {
        match self {
            Belief::Gaussian(g) => Some(g),
            Belief::Particles(_) => None,
        }
    }

    pub fn as_particles(&self) -> Option<&ParticleBelief> {
        match self {
            Belief::Gaussian(_) => None,
            Belief::Particles(p) => Some(p),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrackStatus {
    Tentative,
    Confirmed,
    Terminated,
}

/// Fixed-length record of per-scan hits, newest last.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HitHistory {
    window: usize,
    hits: VecDeque<bool>,
}

impl HitHistory {
    pub fn new(window: usize) -> Self {
        Self { window: window.max(1), hits: VecDeque::with_capacity(window.max(1)) }
    }

    pub fn push(&mut self, hit: bool) {
        if self.hits.len() == self.window {
            self.hits.pop_front();
        }
        self.hits.push_back(hit);
    }

    pub fn count(&self) -> usize {
        self.hits.iter().filter(|h| **h).count()
    }

    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Number of trailing misses.
    pub fn consecutive_misses(&self) -> usize {
        self.hits.iter().rev().take_while(|h| !**h).count()
    }
}

/// A potential target: label, existence probability and kinematic belief.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialTrack {
    pub label: u64,
    pub existence: f64,
    pub belief: Belief,
    pub hits: HitHistory,
    pub status: TrackStatus,
    pub birth_time: usize,
}

impl PotentialTrack {
    pub fn new(label: u64, existence: f64, belief: Belief, window: usize, birth_time: usize) -> Self {
        debug_assert!((0.0..=1.0).contains(&existence));
        Self { label, existence, belief, hits: HitHistory::new(window), status: TrackStatus::Tentative, birth_time }
    }
}

/// Origin of a simulated measurement, kept for diagnostics only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Origin {
    Target(usize),
    Clutter,
}

/// One scan of point measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementFrame {
    pub time: usize,
    pub measurements: Vec<Vector2<f64>>,
    pub truth_origin: Option<Vec<Origin>>,
}

impl MeasurementFrame {
    pub fn new(time: usize, measurements: Vec<Vector2<f64>>) -> Self {
        Self { time, measurements, truth_origin: None }
    }

    pub fn len(&self) -> usize {
        self.measurements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measurements.is_empty()
    }

    /// Hash over the exact bit patterns of the frame contents.
    pub fn content_hash(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.time.hash(&mut h);
        for z in &self.measurements {
            z[0].to_bits().hash(&mut h);
            z[1].to_bits().hash(&mut h);
        }
        self.truth_origin.hash(&mut h);
        h.finish()
    }
}

/// Association weights of one (sub-)problem.
///
/// `beta` is `L x (M + 1)`: column 0 holds the missed-detection weight,
/// column `m` the weight of assigning measurement `m`. `xi0[m]` is the weight
/// of measurement `m` staying unassigned to every legacy target. The weight of
/// a valid event `a` is `prod_j beta[j, a_j] * prod_{m unassigned} xi0[m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AssociationProblem {
    beta: DMatrix<f64>,
    xi0: Vec<f64>,
}

impl AssociationProblem {
    pub fn new(beta: DMatrix<f64>, xi0: Vec<f64>) -> Result<Self, ProblemError> {
        let problem = Self::unchecked(beta, xi0)?;
        for j in 0..problem.targets() {
            if problem.beta.row(j).iter().all(|b| *b <= 0.0) {
                return Err(ProblemError::EmptyRow(j));
            }
        }
        Ok(problem)
    }

    /// Checks shapes and entry signs, but allows rows without any positive
    /// entry (gating can produce those).
    pub(crate) fn unchecked(beta: DMatrix<f64>, xi0: Vec<f64>) -> Result<Self, ProblemError> {
        if beta.ncols() == 0 {
            return Err(ProblemError::NoMissColumn);
        }
        if xi0.len() + 1 != beta.ncols() {
            return Err(ProblemError::XiLength { expected: beta.ncols() - 1, got: xi0.len() });
        }
        for col in 0..beta.ncols() {
            for row in 0..beta.nrows() {
                let value = beta[(row, col)];
                if !value.is_finite() || value < 0.0 {
                    return Err(ProblemError::BadEntry { row, col, value });
                }
            }
        }
        for (index, &value) in xi0.iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(ProblemError::BadXi { index, value });
            }
        }
        Ok(Self { beta, xi0 })
    }

    /// Convenience constructor from row slices.
    pub fn from_rows(rows: &[Vec<f64>], xi0: Vec<f64>) -> Result<Self, ProblemError> {
        let cols = xi0.len() + 1;
        let mut beta = DMatrix::zeros(rows.len(), cols);
        for (j, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(ProblemError::XiLength { expected: row.len().saturating_sub(1), got: xi0.len() });
            }
            for (m, v) in row.iter().enumerate() {
                beta[(j, m)] = *v;
            }
        }
        Self::new(beta, xi0)
    }

    /// Number of targets `L`.
    pub fn targets(&self) -> usize {
        self.beta.nrows()
    }

    /// Number of measurements `M`.
    pub fn measurements(&self) -> usize {
        self.xi0.len()
    }

    pub fn beta(&self) -> &DMatrix<f64> {
        &self.beta
    }

    pub fn xi0(&self) -> &[f64] {
        &self.xi0
    }

    /// `beta[j, col]` with column 0 the missed detection.
    pub fn weight(&self, target: usize, col: usize) -> f64 {
        self.beta[(target, col)]
    }

    pub(crate) fn beta_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.beta
    }
}
