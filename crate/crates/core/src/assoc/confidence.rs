use super::AssocError;

/// Raises a pmf row to the power `rho` and renormalizes. `rho > 1` sharpens
/// the row toward its argmax, `rho < 1` flattens it toward uniform over the
/// support. Computed in the log domain so extreme exponents stay exact.
pub fn confidence_scale(row: &[f64], rho: f64) -> Result<Vec<f64>, AssocError> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(AssocError::InvalidRho(rho));
    }
    let logs: Vec<f64> = row.iter().map(|p| if *p > 0.0 { rho * p.ln() } else { f64::NEG_INFINITY }).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(AssocError::Degenerate);
    }
    let unnorm: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = unnorm.iter().sum();
    Ok(unnorm.into_iter().map(|w| w / sum).collect())
}
