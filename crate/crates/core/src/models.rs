//! Linear-Gaussian motion and measurement models.

use nalgebra::{Matrix2, Matrix2x4, Matrix4, Vector2, Vector4};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::config::{Roi, ValidatedConfig};
use crate::types::{GaussianBelief, ParticleBelief};

/// Innovation covariances above this condition number are rejected.
pub const MAX_INNOVATION_CONDITION: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("innovation covariance is singular (condition number {0:e})")]
    SingularInnovation(f64),
    #[error("filtered sequence has {filtered} entries but predicted has {predicted}")]
    LengthMismatch { filtered: usize, predicted: usize },
    #[error("cannot resample an empty belief")]
    EmptyBelief,
}

/// Nearly constant-velocity motion with white-acceleration noise.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionModel {
    transition: Matrix4<f64>,
    process_noise: Matrix4<f64>,
    noise_factor: Matrix4<f64>,
    survival: f64,
}

impl MotionModel {
    pub fn new(period: f64, sigma_u2: f64, survival: f64) -> Self {
        let t = period;
        #[rustfmt::skip]
        let transition = Matrix4::new(
            1.0, 0.0, t, 0.0,
            0.0, 1.0, 0.0, t,
            0.0, 0.0, 1.0, 0.0,
            0.0, 0.0, 0.0, 1.0,
        );
        let (t2, t3) = (t * t / 2.0, t * t * t / 3.0);
        #[rustfmt::skip]
        let process_noise = Matrix4::new(
            t3, 0.0, t2, 0.0,
            0.0, t3, 0.0, t2,
            t2, 0.0, t, 0.0,
            0.0, t2, 0.0, t,
        ) * sigma_u2;
        let noise_factor = sqrt_factor(&process_noise);
        Self { transition, process_noise, noise_factor, survival }
    }

    pub fn from_config(cfg: &ValidatedConfig) -> Self {
        Self::new(cfg.period, cfg.sigma_u2, cfg.p_s)
    }

    pub fn transition(&self) -> &Matrix4<f64> {
        &self.transition
    }

    pub fn process_noise(&self) -> &Matrix4<f64> {
        &self.process_noise
    }

    pub fn survival(&self) -> f64 {
        self.survival
    }

    /// Copy with a different survival probability.
    pub fn with_survival(&self, survival: f64) -> Self {
        Self { survival, ..self.clone() }
    }
}

/// Position measurements with isotropic Gaussian noise and uniform clutter.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementModel {
    noise_std: f64,
    detection: f64,
    clutter_rate: f64,
    roi: Roi,
}

impl MeasurementModel {
    pub fn new(noise_std: f64, detection: f64, clutter_rate: f64, roi: Roi) -> Self {
        Self { noise_std, detection, clutter_rate, roi }
    }

    pub fn from_config(cfg: &ValidatedConfig) -> Self {
        Self::new(cfg.sigma_v, cfg.p_d, cfg.mu_c, cfg.roi)
    }

    pub fn observation() -> Matrix2x4<f64> {
        Matrix2x4::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0)
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    pub fn noise_cov(&self) -> Matrix2<f64> {
        Matrix2::identity() * (self.noise_std * self.noise_std)
    }

    pub fn detection(&self) -> f64 {
        self.detection
    }

    pub fn clutter_rate(&self) -> f64 {
        self.clutter_rate
    }

    pub fn roi(&self) -> &Roi {
        &self.roi
    }

    /// Clutter intensity `mu_c * f_c(z)` for `z` inside the ROI.
    pub fn clutter_intensity(&self) -> f64 {
        self.clutter_rate / self.roi.area()
    }

    pub fn with_detection(&self, detection: f64) -> Self {
        Self { detection, ..self.clone() }
    }
}

/// Predicted measurement distribution of a Gaussian belief.
#[derive(Debug, Clone, PartialEq)]
pub struct Innovation {
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
    inv: Matrix2<f64>,
    norm: f64,
}

impl Innovation {
    pub fn new(belief: &GaussianBelief, model: &MeasurementModel) -> Result<Self, ModelError> {
        let p = belief.cov();
        let cov = p.fixed_view::<2, 2>(0, 0).into_owned() + model.noise_cov();
        Self::from_parts(belief.mean().fixed_rows::<2>(0).into_owned(), cov)
    }

    pub fn from_parts(mean: Vector2<f64>, cov: Matrix2<f64>) -> Result<Self, ModelError> {
        let cov = (cov + cov.transpose()) * 0.5;
        let cond = condition_2x2(&cov);
        if !(cond <= MAX_INNOVATION_CONDITION) {
            return Err(ModelError::SingularInnovation(cond));
        }
        let det = cov.determinant();
        let inv = Matrix2::new(cov[(1, 1)], -cov[(0, 1)], -cov[(1, 0)], cov[(0, 0)]) / det;
        let norm = 1.0 / (2.0 * std::f64::consts::PI * det.sqrt());
        Ok(Self { mean, cov, inv, norm })
    }

    pub fn inverse(&self) -> &Matrix2<f64> {
        &self.inv
    }

    /// Squared Mahalanobis distance of `z`.
    pub fn mahalanobis2(&self, z: &Vector2<f64>) -> f64 {
        let d = z - self.mean;
        (d.transpose() * self.inv * d)[(0, 0)]
    }

    /// Gaussian density of `z`.
    pub fn density(&self, z: &Vector2<f64>) -> f64 {
        self.norm * (-0.5 * self.mahalanobis2(z)).exp()
    }
}

fn condition_2x2(m: &Matrix2<f64>) -> f64 {
    let (a, b, d) = (m[(0, 0)], m[(0, 1)], m[(1, 1)]);
    let mid = 0.5 * (a + d);
    let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    let (hi, lo) = (mid + rad, mid - rad);
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Kalman prediction.
pub fn predict(belief: &GaussianBelief, model: &MotionModel) -> GaussianBelief {
    let a = model.transition();
    GaussianBelief::from_trusted(a * belief.mean(), a * belief.cov() * a.transpose() + model.process_noise())
}

/// Kalman update with a position measurement. Returns the posterior and the
/// measurement likelihood `N(z; H mean, S)`.
pub fn kalman_update(
    belief: &GaussianBelief,
    z: &Vector2<f64>,
    model: &MeasurementModel,
) -> Result<(GaussianBelief, f64), ModelError> {
    let innovation = Innovation::new(belief, model)?;
    let likelihood = innovation.density(z);
    Ok((update_with(belief, &innovation, z, model), likelihood))
}

/// Joseph-form update reusing a precomputed innovation.
pub fn update_with(
    belief: &GaussianBelief,
    innovation: &Innovation,
    z: &Vector2<f64>,
    model: &MeasurementModel,
) -> GaussianBelief {
    let h = MeasurementModel::observation();
    let p = belief.cov();
    let gain = p * h.transpose() * innovation.inverse();
    let mean = belief.mean() + gain * (z - innovation.mean);
    let i_kh = Matrix4::identity() - gain * h;
    let cov = i_kh * p * i_kh.transpose() + gain * model.noise_cov() * gain.transpose();
    GaussianBelief::from_trusted(mean, cov)
}

/// Fixed-interval Rauch-Tung-Striebel smoother.
///
/// `predicted[k]` is the one-step prediction for scan `k` made from
/// `filtered[k - 1]`; `predicted[0]` is not used.
pub fn rts_smooth(
    filtered: &[GaussianBelief],
    predicted: &[GaussianBelief],
    model: &MotionModel,
) -> Result<Vec<GaussianBelief>, ModelError> {
    if filtered.len() != predicted.len() {
        return Err(ModelError::LengthMismatch { filtered: filtered.len(), predicted: predicted.len() });
    }
    let mut out = filtered.to_vec();
    let a = model.transition();
    for k in (0..filtered.len().saturating_sub(1)).rev() {
        let next_pred = &predicted[k + 1];
        let pred_inv = next_pred
            .cov()
            .cholesky()
            .map(|c| c.inverse())
            .unwrap_or_else(|| next_pred.cov().pseudo_inverse(1e-12).expect("svd converges"));
        let gain = filtered[k].cov() * a.transpose() * pred_inv;
        let mean = filtered[k].mean() + gain * (out[k + 1].mean() - next_pred.mean());
        let cov = filtered[k].cov() + gain * (out[k + 1].cov() - next_pred.cov()) * gain.transpose();
        out[k] = GaussianBelief::from_trusted(mean, cov);
    }
    Ok(out)
}

/// Lower-triangular factor `L` with `L L^T = cov`, tolerating semidefinite
/// input.
pub fn sqrt_factor(cov: &Matrix4<f64>) -> Matrix4<f64> {
    if let Some(chol) = cov.cholesky() {
        return chol.l();
    }
    let eig = cov.symmetric_eigen();
    let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    eig.eigenvectors * Matrix4::from_diagonal(&sqrt_vals)
}

fn standard_normal4<R: Rng + ?Sized>(rng: &mut R) -> Vector4<f64> {
    Vector4::from_fn(|_, _| rng.sample(StandardNormal))
}

/// Propagates every particle through the motion model with sampled noise.
pub fn predict_particles<R: Rng + ?Sized>(belief: &ParticleBelief, model: &MotionModel, rng: &mut R) -> ParticleBelief {
    let a = model.transition();
    let l = &model.noise_factor;
    let states = belief.states().iter().map(|s| a * s + l * standard_normal4(rng)).collect();
    ParticleBelief::from_unnormalized(states, belief.weights().to_vec())
}

fn particle_terms<'a>(
    belief: &'a ParticleBelief,
    z: &'a Vector2<f64>,
    model: &MeasurementModel,
) -> impl Iterator<Item = f64> + 'a {
    let var = model.noise_std() * model.noise_std();
    let norm = 1.0 / (2.0 * std::f64::consts::PI * var);
    belief.states().iter().zip(belief.weights()).map(move |(s, w)| {
        let (dx, dy) = (z[0] - s[0], z[1] - s[1]);
        w * norm * (-0.5 * (dx * dx + dy * dy) / var).exp()
    })
}

/// Likelihood `sum_i w_i N(z; H x_i, R)`.
pub fn particle_likelihood(belief: &ParticleBelief, z: &Vector2<f64>, model: &MeasurementModel) -> f64 {
    particle_terms(belief, z, model).sum()
}

/// Per-particle unnormalized weights `w_i N(z; H x_i, R)`.
pub fn particle_reweight(belief: &ParticleBelief, z: &Vector2<f64>, model: &MeasurementModel) -> Vec<f64> {
    particle_terms(belief, z, model).collect()
}

/// Systematic resampling offsets for `count` draws from `weights`.
pub(crate) fn systematic_indices<R: Rng + ?Sized>(weights: &[f64], count: usize, rng: &mut R) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let step = total / count as f64;
    let mut u = rng.random::<f64>() * step;
    let mut out = Vec::with_capacity(count);
    let mut cumulative = 0.0;
    let mut i = 0;
    let last = weights.iter().rposition(|w| *w > 0.0).unwrap_or(weights.len() - 1);
    for _ in 0..count {
        while i < last && cumulative + weights[i] <= u {
            cumulative += weights[i];
            i += 1;
        }
        out.push(i);
        u += step;
    }
    out
}

/// Systematic resampling to `count` equally weighted particles.
pub fn resample<R: Rng + ?Sized>(
    belief: &ParticleBelief,
    count: usize,
    rng: &mut R,
) -> Result<ParticleBelief, ModelError> {
    if belief.is_empty() || count == 0 {
        return Err(ModelError::EmptyBelief);
    }
    let states = systematic_indices(belief.weights(), count, rng).into_iter().map(|i| belief.states()[i]).collect();
    Ok(ParticleBelief::from_unnormalized(states, vec![1.0; count]))
}

/// Draws `count` equally weighted particles from a Gaussian mixture.
/// Component counts follow systematic allocation on the mixture weights.
pub fn sample_mixture<R: Rng + ?Sized>(
    components: &[(f64, GaussianBelief)],
    count: usize,
    rng: &mut R,
) -> Result<ParticleBelief, ModelError> {
    if components.is_empty() || count == 0 {
        return Err(ModelError::EmptyBelief);
    }
    let weights: Vec<f64> = components.iter().map(|(w, _)| *w).collect();
    let indices = systematic_indices(&weights, count, rng);
    let factors: Vec<Matrix4<f64>> = components.iter().map(|(_, g)| sqrt_factor(g.cov())).collect();
    let states = indices.into_iter().map(|c| components[c].1.mean() + factors[c] * standard_normal4(rng)).collect();
    Ok(ParticleBelief::from_unnormalized(states, vec![1.0; count]))
}
