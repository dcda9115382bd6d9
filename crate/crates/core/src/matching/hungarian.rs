//! Minimum-cost bipartite assignment by shortest augmenting paths with
//! potentials (the Jonker-Volgenant style Hungarian variant).

use crate::error::{Error, Result};
use ndarray::Array2;

/// Outcome of assigning each cost-matrix column (ground-truth item) to a
/// distinct row (prediction).
#[derive(Clone, Debug)]
pub struct MatchResult {
    /// For each column `j`, the row assigned to it.
    pub assignment: Vec<usize>,
    /// Sum of cost entries at the assigned cells.
    pub total_cost: f64,
}

/// Solve the assignment problem on an `n x m` cost matrix with `m <= n`
/// (the matrix is padded internally otherwise; padded columns are dropped
/// from the result). Errors on non-finite entries.
pub fn hungarian(cost: &Array2<f64>) -> Result<MatchResult> {
    let (n, m) = cost.dim();
    if cost.iter().any(|x| !x.is_finite()) {
        return Err(Error::Matching("non-finite cost entry".into()));
    }
    if m == 0 {
        return Ok(MatchResult { assignment: Vec::new(), total_cost: 0.0 });
    }
    if m > n {
        // pad with dummy rows of large cost, then strip assignments to them
        let pad = m - n;
        let big = cost.iter().cloned().fold(0.0f64, f64::max).abs() * 2.0 + 1.0;
        let mut padded = Array2::from_elem((n + pad, m), big);
        padded.slice_mut(ndarray::s![..n, ..]).assign(cost);
        let r = solve(&padded);
        let mut total = 0.0;
        let mut assignment = Vec::with_capacity(m);
        for (j, &i) in r.iter().enumerate() {
            assignment.push(i);
            if i < n {
                total += cost[[i, j]];
            }
        }
        return Ok(MatchResult { assignment, total_cost: total });
    }
    let assignment = solve(cost);
    let total = assignment.iter().enumerate().map(|(j, &i)| cost[[i, j]]).sum();
    Ok(MatchResult { assignment, total_cost: total })
}

/// Core solver: assigns every column of an `n x m` matrix (`m <= n`) to a
/// distinct row, minimizing total cost. O(m^2 n).
fn solve(cost: &Array2<f64>) -> Vec<usize> {
    let (n, m) = cost.dim();
    const UNSET: usize = usize::MAX;
    // potentials over columns (u) and rows (v); way[i] = predecessor column
    let mut u = vec![0.0f64; m + 1];
    let mut v = vec![0.0f64; n + 1];
    // p[i] = column assigned to row i (1-based sentinel at p[n])
    let mut p = vec![UNSET; n + 1];

    for j in 0..m {
        // find augmenting path for column j
        let mut p0 = n; // virtual free row slot
        p[p0] = j;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut way = vec![UNSET; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[p0] = true;
            let j0 = p[p0];
            let mut delta = f64::INFINITY;
            let mut i1 = UNSET;
            for i in 0..n {
                if used[i] {
                    continue;
                }
                let cur = cost[[i, j0]] - u[j0] - v[i];
                if cur < minv[i] {
                    minv[i] = cur;
                    way[i] = p0;
                }
                if minv[i] < delta {
                    delta = minv[i];
                    i1 = i;
                }
            }
            for i in 0..=n {
                if used[i] {
                    u[p[i]] += delta;
                    v[i] -= delta;
                } else {
                    minv[i] -= delta;
                }
            }
            p0 = i1;
            if p[p0] == UNSET {
                break;
            }
        }
        // augment along the path
        loop {
            let prev = way[p0];
            p[p0] = p[prev];
            p0 = prev;
            if p0 == n {
                break;
            }
        }
        p[n] = UNSET;
    }

    let mut assignment = vec![UNSET; m];
    for (i, &col) in p.iter().enumerate().take(n) {
        if col != UNSET {
            assignment[col] = i;
        }
    }
    debug_assert!(assignment.iter().all(|&i| i != UNSET));
    assignment
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive minimum over all injective column -> row maps.
    pub(crate) fn brute_force(cost: &Array2<f64>) -> f64 {
        let (n, m) = cost.dim();
        fn rec(cost: &Array2<f64>, j: usize, used: &mut [bool], acc: f64, best: &mut f64) {
            let (n, m) = cost.dim();
            if j == m {
                if acc < *best {
                    *best = acc;
                }
                return;
            }
            for i in 0..n {
                if !used[i] {
                    used[i] = true;
                    rec(cost, j + 1, used, acc + cost[[i, j]], best);
                    used[i] = false;
                }
            }
        }
        assert!(m <= n);
        let mut best = f64::INFINITY;
        rec(cost, 0, &mut vec![false; n], 0.0, &mut best);
        best
    }

    #[test]
    fn diagonal_zero_matrix_assigns_identity() {
        let mut cost = Array2::from_elem((4, 4), 5.0);
        for i in 0..4 {
            cost[[i, i]] = 0.0;
        }
        let r = hungarian(&cost).unwrap();
        assert_eq!(r.assignment, vec![0, 1, 2, 3]);
        assert_eq!(r.total_cost, 0.0);
    }

    #[test]
    fn three_by_three_example() {
        let cost = arr2(&[[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]]);
        let r = hungarian(&cost).unwrap();
        // optimal: rows (0,1,2) matched to columns (1,0,2), total 1+2+2 = 5
        assert_eq!(r.total_cost, 5.0);
        assert_eq!(r.assignment, vec![1, 0, 2]);
    }

    #[test]
    fn rectangular_more_rows() {
        let cost = arr2(&[[9.0, 9.0], [1.0, 9.0], [9.0, 1.0], [5.0, 5.0]]);
        let r = hungarian(&cost).unwrap();
        assert_eq!(r.assignment, vec![1, 2]);
        assert_eq!(r.total_cost, 2.0);
    }

    #[test]
    fn rectangular_more_cols_pads() {
        let cost = arr2(&[[1.0, 2.0, 3.0]]);
        let r = hungarian(&cost).unwrap();
        // only one real row; it should take the cheapest column
        assert_eq!(r.assignment.len(), 3);
        assert_eq!(r.assignment[0], 0);
        assert_eq!(r.total_cost, 1.0);
    }

    #[test]
    fn non_finite_rejected() {
        let cost = arr2(&[[f64::NAN, 1.0], [1.0, 1.0]]);
        assert!(hungarian(&cost).is_err());
    }

    #[test]
    fn matches_brute_force_and_beats_random_permutations() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..100 {
            let n = rng.random_range(2..=6);
            let cost = Array2::from_shape_fn((n, n), |_| rng.random_range(0.0..10.0));
            let r = hungarian(&cost).unwrap();
            let best = brute_force(&cost);
            assert!((r.total_cost - best).abs() < 1e-9, "JV {} vs brute {}", r.total_cost, best);
            // sanity: not worse than a random permutation
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            let perm_cost: f64 = perm.iter().enumerate().map(|(j, &i)| cost[[i, j]]).sum();
            assert!(r.total_cost <= perm_cost + 1e-12);
        }
    }
}
