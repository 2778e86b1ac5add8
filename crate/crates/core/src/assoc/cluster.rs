use nalgebra::DMatrix;

use super::MarginalDA;
use crate::types::AssociationProblem;

/// An independent sub-problem. `targets` and `measurements` are indices into
/// the original problem (measurements 0-based; column `m + 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub targets: Vec<usize>,
    pub measurements: Vec<usize>,
    pub problem: AssociationProblem,
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Connected components of the target/measurement graph with an edge
/// wherever `beta[j, m] > 0`. Clusters are ordered by their smallest target
/// index, then measurement-only clusters by measurement index.
pub fn cluster(problem: &AssociationProblem) -> Vec<Cluster> {
    let (l, m) = (problem.targets(), problem.measurements());
    let mut parent: Vec<usize> = (0..l + m).collect();
    for j in 0..l {
        for k in 0..m {
            if problem.weight(j, k + 1) > 0.0 {
                let (a, b) = (find(&mut parent, j), find(&mut parent, l + k));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut slot = vec![usize::MAX; l + m];
    let mut groups: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
    for node in 0..l + m {
        let root = find(&mut parent, node);
        if slot[root] == usize::MAX {
            slot[root] = groups.len();
            groups.push((Vec::new(), Vec::new()));
        }
        let g = &mut groups[slot[root]];
        if node < l {
            g.0.push(node);
        } else {
            g.1.push(node - l);
        }
    }
    groups
        .into_iter()
        .map(|(targets, measurements)| {
            let mut beta = DMatrix::zeros(targets.len(), measurements.len() + 1);
            for (r, &j) in targets.iter().enumerate() {
                beta[(r, 0)] = problem.weight(j, 0);
                for (c, &k) in measurements.iter().enumerate() {
                    beta[(r, c + 1)] = problem.weight(j, k + 1);
                }
            }
            let xi0 = measurements.iter().map(|&k| problem.xi0()[k]).collect();
            let problem = AssociationProblem::unchecked(beta, xi0).expect("sub-problem of a valid problem");
            Cluster { targets, measurements, problem }
        })
        .collect()
}

/// Reassembles per-cluster marginals into an `L x (M + 1)` marginal.
pub fn scatter_marginals(
    targets: usize,
    measurements: usize,
    clusters: &[Cluster],
    marginals: &[MarginalDA],
) -> MarginalDA {
    let mut probs = DMatrix::zeros(targets, measurements + 1);
    for (c, marg) in clusters.iter().zip(marginals) {
        for (r, &j) in c.targets.iter().enumerate() {
            probs[(j, 0)] = marg.get(r, 0);
            for (col, &k) in c.measurements.iter().enumerate() {
                probs[(j, k + 1)] = marg.get(r, col + 1);
            }
        }
    }
    MarginalDA::from_probs(probs)
}
