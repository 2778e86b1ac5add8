use nalgebra::DMatrix;

use super::{AssocError, MarginalDA};
use crate::types::AssociationProblem;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BpOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Weight of the previous message in each update, in `[0, 1)`.
    pub damping: f64,
}

impl Default for BpOptions {
    fn default() -> Self {
        Self { tolerance: 1e-6, max_iterations: 200, damping: 0.0 }
    }
}

/// `sum_{i != k} values[i]` for every `k`, without subtraction so that
/// infinite entries and cancellation are harmless.
fn exclusive_sums(values: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.resize(values.len(), 0.0);
    let mut prefix = 0.0;
    for (o, v) in out.iter_mut().zip(values) {
        *o = prefix;
        prefix += v;
    }
    let mut suffix = 0.0;
    for (o, v) in out.iter_mut().zip(values).rev() {
        *o += suffix;
        suffix += v;
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

fn change(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs()
    }
}

/// Approximate marginals by loopy belief propagation on the bipartite
/// target/measurement association graph.
///
/// Messages live on the nonzero entries of `beta`. With `phi` the
/// target-to-measurement and `nu` the measurement-to-target messages:
///
/// ```text
/// phi[j -> m] = beta[j, m] / (beta[j, 0] + sum_{m' != m} beta[j, m'] nu[m' -> j])
/// nu[m -> j]  = 1 / (xi0[m] + sum_{j' != j} phi[j' -> m])
/// p(a_j = m) ∝ beta[j, m] nu[m -> j],   p(a_j = 0) ∝ beta[j, 0]
/// ```
///
/// Returns the marginals and the number of iterations used. On
/// non-convergence the last iterate is carried in the error.
pub fn bp_marginals(problem: &AssociationProblem, opts: BpOptions) -> Result<(MarginalDA, usize), AssocError> {
    let (l, m) = (problem.targets(), problem.measurements());
    // Edge list in row-major order.
    let mut edge_target = Vec::new();
    let mut edge_meas = Vec::new();
    let mut edge_beta = Vec::new();
    let mut row_start = Vec::with_capacity(l + 1);
    for j in 0..l {
        row_start.push(edge_beta.len());
        for k in 0..m {
            let b = problem.weight(j, k + 1);
            if b > 0.0 {
                edge_target.push(j);
                edge_meas.push(k);
                edge_beta.push(b);
            }
        }
    }
    row_start.push(edge_beta.len());
    let edges = edge_beta.len();
    let mut col_edges: Vec<Vec<usize>> = vec![Vec::new(); m];
    for e in 0..edges {
        col_edges[edge_meas[e]].push(e);
    }

    let mut nu = vec![1.0; edges];
    let mut phi = vec![0.0; edges];
    let mut scratch = Vec::new();
    let mut excl = Vec::new();
    let mut converged_at = None;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        iterations += 1;
        for j in 0..l {
            let (s, t) = (row_start[j], row_start[j + 1]);
            scratch.clear();
            scratch.extend((s..t).map(|e| edge_beta[e] * nu[e]));
            exclusive_sums(&scratch, &mut excl);
            let miss = problem.weight(j, 0);
            for (i, e) in (s..t).enumerate() {
                phi[e] = ratio(edge_beta[e], miss + excl[i]);
            }
        }
        let mut delta: f64 = 0.0;
        for (k, incoming) in col_edges.iter().enumerate() {
            scratch.clear();
            scratch.extend(incoming.iter().map(|&e| phi[e]));
            exclusive_sums(&scratch, &mut excl);
            let xi = problem.xi0()[k];
            for (i, &e) in incoming.iter().enumerate() {
                let fresh = ratio(1.0, xi + excl[i]);
                let next = if opts.damping > 0.0 && nu[e].is_finite() && fresh.is_finite() {
                    (1.0 - opts.damping) * fresh + opts.damping * nu[e]
                } else {
                    fresh
                };
                delta = delta.max(change(next, nu[e]));
                nu[e] = next;
            }
        }
        if delta < opts.tolerance {
            converged_at = Some(iterations);
            break;
        }
    }

    let mut weights = DMatrix::zeros(l, m + 1);
    for j in 0..l {
        let (s, t) = (row_start[j], row_start[j + 1]);
        let products: Vec<f64> = (s..t).map(|e| edge_beta[e] * nu[e]).collect();
        if products.iter().any(|p| p.is_infinite()) {
            for (i, e) in (s..t).enumerate() {
                if products[i].is_infinite() {
                    weights[(j, edge_meas[e] + 1)] = 1.0;
                }
            }
        } else {
            weights[(j, 0)] = problem.weight(j, 0);
            for (i, e) in (s..t).enumerate() {
                weights[(j, edge_meas[e] + 1)] = products[i];
            }
        }
        debug_assert!(edge_target[s..t].iter().all(|&tj| tj == j));
    }
    let marginals = MarginalDA::from_weights(weights)?;
    match converged_at {
        Some(n) => Ok((marginals, n)),
        None => Err(AssocError::NoConvergence { iterations, last: Box::new(marginals) }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assoc::{exact_marginals, DEFAULT_ENUMERATION_GUARD};

    #[test]
    fn single_target_is_exact() {
        let p = AssociationProblem::from_rows(&[vec![0.3, 2.0, 0.5, 4.0]], vec![0.7, 1.5, 2.0]).unwrap();
        let (bp, _) = bp_marginals(&p, BpOptions::default()).unwrap();
        let ex = exact_marginals(&p, DEFAULT_ENUMERATION_GUARD).unwrap();
        assert!(bp.max_abs_diff(&ex) < 1e-10);
    }

    #[test]
    fn symmetric_fixed_point() {
        let p = AssociationProblem::from_rows(&[vec![0.0, 3.0, 3.0], vec![0.0, 3.0, 3.0]], vec![1e-9, 1e-9]).unwrap();
        let (bp, _) = bp_marginals(&p, BpOptions::default()).unwrap();
        for j in 0..2 {
            assert!((bp.get(j, 1) - 0.5).abs() < 1e-9);
            assert!((bp.get(j, 2) - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn exclusive_sums_handle_infinity() {
        let mut out = Vec::new();
        exclusive_sums(&[1.0, f64::INFINITY, 2.0], &mut out);
        assert_eq!(out, vec![f64::INFINITY, 3.0, f64::INFINITY]);
    }

    #[test]
    fn zero_xi_with_single_claimant_forces_assignment() {
        let p = AssociationProblem::from_rows(&[vec![0.5, 1.0]], vec![0.0]).unwrap();
        let (bp, _) = bp_marginals(&p, BpOptions::default()).unwrap();
        assert_eq!(bp.row(0), vec![0.0, 1.0]);
    }
}
