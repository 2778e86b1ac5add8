//! Rectangular linear assignment by shortest augmenting paths.

use nalgebra::DMatrix;

/// Minimum-cost assignment of every row to a distinct column.
///
/// Requires `rows <= cols`. Entries equal to `f64::INFINITY` are forbidden.
/// Returns the column of each row and the total cost, or `None` when no
/// finite-cost assignment exists.
pub fn solve(cost: &DMatrix<f64>) -> Option<(Vec<usize>, f64)> {
    let (n, m) = (cost.nrows(), cost.ncols());
    assert!(n <= m, "assignment needs rows <= cols ({n} > {m})");
    if n == 0 {
        return Some((Vec::new(), 0.0));
    }
    // 1-based potentials and matching as in the classic formulation.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut matched = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    let mut minv = vec![f64::INFINITY; m + 1];
    let mut used = vec![false; m + 1];
    for i in 1..=n {
        matched[0] = i;
        let mut j0 = 0;
        minv.iter_mut().for_each(|x| *x = f64::INFINITY);
        used.iter_mut().for_each(|x| *x = false);
        loop {
            used[j0] = true;
            let i0 = matched[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let c = cost[(i0 - 1, j - 1)];
                if c.is_finite() {
                    let cur = c - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            if !delta.is_finite() {
                return None;
            }
            for j in 0..=m {
                if used[j] {
                    u[matched[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched[j0] = matched[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=m {
        if matched[j] != 0 {
            assignment[matched[j] - 1] = j - 1;
        }
    }
    let total = assignment.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum();
    Some((assignment, total))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_example() {
        let c = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0]);
        let (a, cost) = solve(&c).unwrap();
        assert_eq!(cost, 5.0);
        assert_eq!(a, vec![1, 0, 2]);
    }

    #[test]
    fn forbidden_entries() {
        let inf = f64::INFINITY;
        let c = DMatrix::from_row_slice(2, 2, &[inf, 1.0, inf, 2.0]);
        assert!(solve(&c).is_none());
        let c = DMatrix::from_row_slice(2, 3, &[inf, 1.0, 7.0, inf, 2.0, inf]);
        let (a, cost) = solve(&c).unwrap();
        assert_eq!((a, cost), (vec![2, 1], 9.0));
    }

    #[test]
    fn negative_costs() {
        let c = DMatrix::from_row_slice(2, 3, &[-5.0, -1.0, 0.0, -4.0, -3.0, 0.0]);
        assert_eq!(solve(&c).unwrap(), (vec![0, 1], -8.0));
    }
}
