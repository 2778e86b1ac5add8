use nalgebra::{DMatrix, Vector2};

use crate::models::{particle_likelihood, Innovation, MeasurementModel, ModelError};
use crate::types::{AssociationProblem, Belief, GaussianBelief, MeasurementFrame, ParticleBelief};

/// A predicted single-target belief that can score measurements.
pub trait PredictedBelief {
    /// Gaussian innovation used for gating (moment-matched for particles).
    fn innovation(&self, model: &MeasurementModel) -> Result<Innovation, ModelError>;

    /// Predictive likelihood `f(z | a = m)` of a measurement.
    fn likelihood(&self, z: &Vector2<f64>, innovation: &Innovation, model: &MeasurementModel) -> f64;
}

impl PredictedBelief for GaussianBelief {
    fn innovation(&self, model: &MeasurementModel) -> Result<Innovation, ModelError> {
        Innovation::new(self, model)
    }

    fn likelihood(&self, z: &Vector2<f64>, innovation: &Innovation, _model: &MeasurementModel) -> f64 {
        innovation.density(z)
    }
}

impl PredictedBelief for ParticleBelief {
    fn innovation(&self, model: &MeasurementModel) -> Result<Innovation, ModelError> {
        Innovation::new(&self.moments(), model)
    }

    fn likelihood(&self, z: &Vector2<f64>, _innovation: &Innovation, model: &MeasurementModel) -> f64 {
        particle_likelihood(self, z, model)
    }
}

impl PredictedBelief for Belief {
    fn innovation(&self, model: &MeasurementModel) -> Result<Innovation, ModelError> {
        match self {
            Belief::Gaussian(g) => g.innovation(model),
            Belief::Particles(p) => p.innovation(model),
        }
    }

    fn likelihood(&self, z: &Vector2<f64>, innovation: &Innovation, model: &MeasurementModel) -> f64 {
        match self {
            Belief::Gaussian(g) => g.likelihood(z, innovation, model),
            Belief::Particles(p) => p.likelihood(z, innovation, model),
        }
    }
}

impl<T: PredictedBelief + ?Sized> PredictedBelief for &T {
    fn innovation(&self, model: &MeasurementModel) -> Result<Innovation, ModelError> {
        (**self).innovation(model)
    }

    fn likelihood(&self, z: &Vector2<f64>, innovation: &Innovation, model: &MeasurementModel) -> f64 {
        (**self).likelihood(z, innovation, model)
    }
}

/// Scaling of the detection likelihood and the clutter weight. Without
/// clutter the likelihood ratio is undefined, so the unnormalized
/// weights are used and unassigned measurements get zero weight.
fn scaling(model: &MeasurementModel) -> (f64, f64) {
    let intensity = model.clutter_intensity();
    if intensity > 0.0 {
        (model.detection() / intensity, 1.0)
    } else {
        (model.detection(), 0.0)
    }
}

fn build<B, F>(
    predicted: &[B],
    frame: &MeasurementFrame,
    model: &MeasurementModel,
    mut admit: F,
) -> Result<AssociationProblem, ModelError>
where
    B: PredictedBelief,
    F: FnMut(&Innovation, &Vector2<f64>) -> bool,
{
    let (scale, xi) = scaling(model);
    let cols = frame.len() + 1;
    let mut beta = DMatrix::zeros(predicted.len(), cols);
    for (j, b) in predicted.iter().enumerate() {
        let innovation = b.innovation(model)?;
        beta[(j, 0)] = 1.0 - model.detection();
        for (m, z) in frame.measurements.iter().enumerate() {
            if admit(&innovation, z) {
                beta[(j, m + 1)] = scale * b.likelihood(z, &innovation, model);
            }
        }
    }
    Ok(AssociationProblem::unchecked(beta, vec![xi; frame.len()]).expect("weights are nonnegative"))
}

/// Association weights of all target/measurement pairs.
pub fn compute_betas<B: PredictedBelief>(
    predicted: &[B],
    frame: &MeasurementFrame,
    model: &MeasurementModel,
) -> Result<AssociationProblem, ModelError> {
    build(predicted, frame, model, |_, _| true)
}

/// Zeroes the weights of pairs outside the chi-square gate.
pub fn gate<B: PredictedBelief>(
    problem: &AssociationProblem,
    predicted: &[B],
    frame: &MeasurementFrame,
    model: &MeasurementModel,
    threshold: f64,
) -> Result<AssociationProblem, ModelError> {
    let mut out = problem.clone();
    for (j, b) in predicted.iter().enumerate() {
        let innovation = b.innovation(model)?;
        for (m, z) in frame.measurements.iter().enumerate() {
            if innovation.mahalanobis2(z) > threshold {
                out.beta_mut()[(j, m + 1)] = 0.0;
            }
        }
    }
    Ok(out)
}

/// `gate(compute_betas(..))` without evaluating out-of-gate likelihoods.
pub fn gated_betas<B: PredictedBelief>(
    predicted: &[B],
    frame: &MeasurementFrame,
    model: &MeasurementModel,
    threshold: f64,
) -> Result<AssociationProblem, ModelError> {
    build(predicted, frame, model, |innovation, z| innovation.mahalanobis2(z) <= threshold)
}
