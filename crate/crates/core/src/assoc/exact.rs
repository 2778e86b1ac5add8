use nalgebra::DMatrix;

use super::{AssocError, AssociationEvent, MarginalDA};
use crate::types::AssociationProblem;

/// Largest number of events the enumerator agrees to visit.
pub const DEFAULT_ENUMERATION_GUARD: u64 = 100_000_000;

/// Upper bound on the number of leaves the enumerator visits:
/// `prod_j (1 + nnz_j)` over the nonzero weights of each row.
pub fn event_count_bound(problem: &AssociationProblem) -> f64 {
    (0..problem.targets()).map(|j| problem.beta().row(j).iter().filter(|b| **b > 0.0).count() as f64).product()
}

struct Enumerator<'a> {
    /// Per row: (column, weight ratio) for every nonzero entry.
    options: Vec<Vec<(usize, f64)>>,
    /// Measurements whose xi0 is zero and that therefore must be assigned.
    required: Vec<bool>,
    required_total: usize,
    used: Vec<bool>,
    current: Vec<usize>,
    visit: &'a mut dyn FnMut(&[usize], f64),
}

impl Enumerator<'_> {
    fn new<'a>(problem: &AssociationProblem, visit: &'a mut dyn FnMut(&[usize], f64)) -> Enumerator<'a> {
        let xi0 = problem.xi0();
        let options = (0..problem.targets())
            .map(|j| {
                (0..=problem.measurements())
                    .filter_map(|col| {
                        let b = problem.weight(j, col);
                        if b <= 0.0 {
                            return None;
                        }
                        let ratio = if col > 0 && xi0[col - 1] > 0.0 { b / xi0[col - 1] } else { b };
                        Some((col, ratio))
                    })
                    .collect()
            })
            .collect();
        let required: Vec<bool> = xi0.iter().map(|x| *x == 0.0).collect();
        let required_total = required.iter().filter(|r| **r).count();
        Enumerator {
            options,
            required,
            required_total,
            used: vec![false; problem.measurements() + 1],
            current: vec![0; problem.targets()],
            visit,
        }
    }

    fn run(&mut self, j: usize, weight: f64, required_hit: usize) {
        if required_hit + (self.options.len() - j) < self.required_total {
            return;
        }
        if j == self.options.len() {
            (self.visit)(&self.current, weight);
            return;
        }
        for idx in 0..self.options[j].len() {
            let (col, ratio) = self.options[j][idx];
            if col > 0 && self.used[col] {
                continue;
            }
            let hit = usize::from(col > 0 && self.required[col - 1]);
            self.current[j] = col;
            if col > 0 {
                self.used[col] = true;
            }
            self.run(j + 1, weight * ratio, required_hit + hit);
            if col > 0 {
                self.used[col] = false;
            }
        }
    }
}

fn check_guard(problem: &AssociationProblem, guard: u64) -> Result<(), AssocError> {
    let events = event_count_bound(problem);
    if events > guard as f64 {
        return Err(AssocError::TooLarge { events, guard });
    }
    Ok(())
}

/// Every valid event with nonzero weight, in lexicographic order, with its
/// weight `prod_j beta[j, a_j] * prod_{m unassigned} xi0[m]`.
pub fn enumerate_events(problem: &AssociationProblem, guard: u64) -> Result<Vec<(AssociationEvent, f64)>, AssocError> {
    check_guard(problem, guard)?;
    let constant: f64 = problem.xi0().iter().filter(|x| **x > 0.0).product();
    let mut events = Vec::new();
    let mut visit = |a: &[usize], w: f64| events.push((AssociationEvent(a.to_vec()), w * constant));
    Enumerator::new(problem, &mut visit).run(0, 1.0, 0);
    Ok(events)
}

/// Exact marginal association pmfs by enumeration of all valid events.
pub fn exact_marginals(problem: &AssociationProblem, guard: u64) -> Result<MarginalDA, AssocError> {
    check_guard(problem, guard)?;
    let (l, m) = (problem.targets(), problem.measurements());
    let mut acc = DMatrix::zeros(l, m + 1);
    let mut total = 0.0;
    let mut visit = |a: &[usize], w: f64| {
        total += w;
        for (j, &col) in a.iter().enumerate() {
            acc[(j, col)] += w;
        }
    };
    Enumerator::new(problem, &mut visit).run(0, 1.0, 0);
    if !(total > 0.0 && total.is_finite()) {
        return Err(AssocError::Degenerate);
    }
    Ok(MarginalDA::from_probs(acc / total))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_two_by_two() {
        let p = AssociationProblem::from_rows(&[vec![0.0, 1.0, 1.0], vec![0.0, 1.0, 1.0]], vec![1e-12, 1e-12]).unwrap();
        let marg = exact_marginals(&p, DEFAULT_ENUMERATION_GUARD).unwrap();
        for j in 0..2 {
            assert!((marg.get(j, 1) - 0.5).abs() < 1e-15);
            assert!((marg.get(j, 2) - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn single_valid_event() {
        let p = AssociationProblem::from_rows(&[vec![0.0, 2.5]], vec![1.0]).unwrap();
        let marg = exact_marginals(&p, DEFAULT_ENUMERATION_GUARD).unwrap();
        assert_eq!(marg.row(0), vec![0.0, 1.0]);
    }

    #[test]
    fn guard_trips() {
        let p = AssociationProblem::from_rows(&[vec![1.0; 4], vec![1.0; 4]], vec![1.0; 3]).unwrap();
        assert!(matches!(exact_marginals(&p, 15), Err(AssocError::TooLarge { .. })));
        assert!(exact_marginals(&p, 16).is_ok());
    }

    #[test]
    fn degenerate_when_no_event_survives() {
        // Both targets must take the single measurement.
        let p = AssociationProblem::from_rows(&[vec![0.0, 1.0], vec![0.0, 1.0]], vec![1.0]).unwrap();
        assert_eq!(exact_marginals(&p, 100), Err(AssocError::Degenerate));
    }

    #[test]
    fn zero_xi_forces_assignment() {
        let p = AssociationProblem::from_rows(&[vec![1.0, 1.0, 1.0]], vec![0.0, 1.0]).unwrap();
        let events = enumerate_events(&p, 100).unwrap();
        assert_eq!(events, vec![(AssociationEvent(vec![1]), 1.0)]);
    }
}
