use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::DMatrix;

use super::{lap, AssocError, AssociationEvent};
use crate::types::AssociationProblem;

/// `ln` of the event weight, summed in target order so that equal events
/// always produce bit-identical values.
pub fn event_log_weight(problem: &AssociationProblem, event: &AssociationEvent) -> f64 {
    let mut used = vec![false; problem.measurements()];
    let mut total = 0.0;
    for (j, &col) in event.0.iter().enumerate() {
        total += problem.weight(j, col).ln();
        if col > 0 {
            used[col - 1] = true;
        }
    }
    for (m, &x) in problem.xi0().iter().enumerate() {
        if !used[m] {
            total += x.ln();
        }
    }
    total
}

struct Node {
    cost: f64,
    event: AssociationEvent,
    columns: Vec<usize>,
    forced: Vec<(usize, usize)>,
    forbidden: Vec<(usize, usize)>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    // Max-heap: lower cost first, then lexicographically smaller event.
    fn cmp(&self, other: &Self) -> Ordering {
        other.cost.total_cmp(&self.cost).then_with(|| other.event.cmp(&self.event))
    }
}

fn cost_matrix(problem: &AssociationProblem) -> DMatrix<f64> {
    let (l, m) = (problem.targets(), problem.measurements());
    let mut cost = DMatrix::from_element(l, m + l, f64::INFINITY);
    for j in 0..l {
        for k in 0..m {
            let b = problem.weight(j, k + 1);
            if b > 0.0 {
                cost[(j, k)] = -(b / problem.xi0()[k]).ln();
            }
        }
        let miss = problem.weight(j, 0);
        if miss > 0.0 {
            cost[(j, m + j)] = -miss.ln();
        }
    }
    cost
}

fn solve_constrained(
    base: &DMatrix<f64>,
    forced: &[(usize, usize)],
    forbidden: &[(usize, usize)],
) -> Option<(Vec<usize>, f64)> {
    let mut cost = base.clone();
    for &(r, c) in forbidden {
        cost[(r, c)] = f64::INFINITY;
    }
    for &(r, c) in forced {
        let keep = cost[(r, c)];
        cost.row_mut(r).fill(f64::INFINITY);
        cost.column_mut(c).fill(f64::INFINITY);
        cost[(r, c)] = keep;
    }
    lap::solve(&cost)
}

fn to_event(columns: &[usize], measurements: usize) -> AssociationEvent {
    AssociationEvent(columns.iter().map(|&c| if c < measurements { c + 1 } else { 0 }).collect())
}

/// The `k` highest-weight valid events with their log-weights, best first.
/// Ties are ordered lexicographically. Fewer than `k` are returned when
/// fewer valid events exist.
pub fn kbest_log_assignments(
    problem: &AssociationProblem,
    k: usize,
) -> Result<Vec<(AssociationEvent, f64)>, AssocError> {
    if let Some(m) = problem.xi0().iter().position(|x| *x <= 0.0) {
        return Err(AssocError::ZeroXi(m));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let (l, m) = (problem.targets(), problem.measurements());
    if l == 0 {
        let event = AssociationEvent(Vec::new());
        let w = event_log_weight(problem, &event);
        return Ok(vec![(event, w)]);
    }
    let base = cost_matrix(problem);
    let mut heap = BinaryHeap::new();
    if let Some((columns, cost)) = lap::solve(&base) {
        let event = to_event(&columns, m);
        heap.push(Node { cost, event, columns, forced: Vec::new(), forbidden: Vec::new() });
    }
    let mut found: Vec<AssociationEvent> = Vec::new();
    let mut kth_cost = f64::INFINITY;
    while let Some(node) = heap.pop() {
        if found.len() >= k && node.cost > kth_cost + 1e-9 * (1.0 + kth_cost.abs()) {
            break;
        }
        // Partition the remaining solution space of this node.
        let mut forced = node.forced.clone();
        for i in 0..l {
            if node.forced.iter().any(|&(r, _)| r == i) {
                continue;
            }
            let mut forbidden = node.forbidden.clone();
            forbidden.push((i, node.columns[i]));
            if let Some((columns, cost)) = solve_constrained(&base, &forced, &forbidden) {
                let event = to_event(&columns, m);
                heap.push(Node { cost, event, columns, forced: forced.clone(), forbidden });
            }
            forced.push((i, node.columns[i]));
        }
        found.push(node.event);
        if found.len() == k {
            kth_cost = node.cost;
        }
    }
    let mut ranked: Vec<(AssociationEvent, f64)> =
        found.into_iter().map(|e| (e.clone(), event_log_weight(problem, &e))).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(k);
    Ok(ranked)
}

/// The `k` highest-weight valid events with their weights, best first.
pub fn kbest_assignments(problem: &AssociationProblem, k: usize) -> Result<Vec<(AssociationEvent, f64)>, AssocError> {
    Ok(kbest_log_assignments(problem, k)?.into_iter().map(|(e, w)| (e, w.exp())).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direct_ranking() {
        let p = AssociationProblem::from_rows(&[vec![0.0, 3.0, 1.0]], vec![1.0, 1.0]).unwrap();
        let best = kbest_assignments(&p, 5).unwrap();
        assert_eq!(best.len(), 2);
        assert_eq!(best[0].0, AssociationEvent(vec![1]));
        assert!((best[0].1 - 3.0).abs() < 1e-12);
        assert_eq!(best[1].0, AssociationEvent(vec![2]));
        assert!((best[1].1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_tie_is_lexicographic() {
        let p = AssociationProblem::from_rows(&[vec![0.0, 2.0, 2.0], vec![0.0, 2.0, 2.0]], vec![1e-3, 1e-3]).unwrap();
        let best = kbest_assignments(&p, 2).unwrap();
        assert_eq!(best[0].0, AssociationEvent(vec![1, 2]));
        assert_eq!(best[1].0, AssociationEvent(vec![2, 1]));
        assert_eq!(best[0].1, best[1].1);
        let first = kbest_assignments(&p, 1).unwrap();
        assert_eq!(first[0].0, AssociationEvent(vec![1, 2]));
    }

    #[test]
    fn zero_xi_rejected() {
        let p = AssociationProblem::from_rows(&[vec![1.0, 1.0]], vec![0.0]).unwrap();
        assert_eq!(kbest_assignments(&p, 1), Err(AssocError::ZeroXi(0)));
    }
}
