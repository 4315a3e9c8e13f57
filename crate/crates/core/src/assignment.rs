//! Assignment problems on square cost matrices.

use crate::error::{Error, Result};
use crate::tensor::Matrix;

fn check_square(cost: &Matrix) -> Result<usize> {
    if !cost.is_square() {
        return Err(Error::shape(format!("assignment needs a square cost matrix, got {:?}", cost.shape())));
    }
    if cost.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("assignment cost matrix"));
    }
    Ok(cost.nrows())
}

/// Minimum-sum assignment (Hungarian algorithm with potentials, O(n³)).
/// Returns `perm` with row `i` assigned to column `perm[i]`.
pub fn min_cost_assignment(cost: &Matrix) -> Result<Vec<usize>> {
    let n = check_square(cost)?;
    if n == 0 {
        return Ok(vec![]);
    }
    let inf = f64::INFINITY;
    // 1-based arrays; p[j] is the row matched to column j, 0 meaning none.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0usize; n];
    for j in 1..=n {
        perm[p[j] - 1] = j - 1;
    }
    Ok(perm)
}

/// Kuhn's augmenting-path matching restricted to edges with cost ≤ limit.
fn perfect_matching_below(cost: &Matrix, limit: f64) -> Option<Vec<usize>> {
    let n = cost.nrows();
    let mut match_col: Vec<Option<usize>> = vec![None; n];
    fn augment(
        cost: &Matrix,
        limit: f64,
        row: usize,
        seen: &mut [bool],
        match_col: &mut [Option<usize>],
    ) -> bool {
        for c in 0..cost.ncols() {
            if cost[(row, c)] <= limit && !seen[c] {
                seen[c] = true;
                let free = match match_col[c] {
                    None => true,
                    Some(r) => augment(cost, limit, r, seen, match_col),
                };
                if free {
                    match_col[c] = Some(row);
                    return true;
                }
            }
        }
        false
    }
    for row in 0..n {
        let mut seen = vec![false; n];
        if !augment(cost, limit, row, &mut seen, &mut match_col) {
            return None;
        }
    }
    let mut perm = vec![0usize; n];
    for (c, r) in match_col.iter().enumerate() {
        perm[r.expect("perfect matching")] = c;
    }
    Some(perm)
}

/// Assignment minimizing the largest matched cost. Returns the permutation
/// and that bottleneck value.
pub fn bottleneck_assignment(cost: &Matrix) -> Result<(Vec<usize>, f64)> {
    let n = check_square(cost)?;
    if n == 0 {
        return Ok((vec![], 0.0));
    }
    let mut values: Vec<f64> = cost.iter().copied().collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let (mut lo, mut hi) = (0usize, values.len() - 1);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if perfect_matching_below(cost, values[mid]).is_some() {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let perm = perfect_matching_below(cost, values[lo]).expect("the largest threshold admits a matching");
    Ok((perm, values[lo]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use itertools::Itertools;
    use proptest::prelude::*;

    fn brute(cost: &Matrix) -> (f64, f64) {
        let n = cost.nrows();
        let mut best_sum = f64::INFINITY;
        let mut best_max = f64::INFINITY;
        for p in (0..n).permutations(n) {
            let s: f64 = (0..n).map(|i| cost[(i, p[i])]).sum();
            let m = (0..n).map(|i| cost[(i, p[i])]).fold(f64::NEG_INFINITY, f64::max);
            best_sum = best_sum.min(s);
            best_max = best_max.min(m);
        }
        (best_sum, best_max)
    }

    #[test]
    fn small_known_instance() {
        let c = Matrix::from_row_slice(3, 3, &[4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0]);
        let p = min_cost_assignment(&c).unwrap();
        let total: f64 = (0..3).map(|i| c[(i, p[i])]).sum();
        assert_eq!(total, 5.0);
    }

    #[test]
    fn rejects_rectangular() {
        assert!(min_cost_assignment(&Matrix::zeros(2, 3)).is_err());
        assert!(bottleneck_assignment(&Matrix::zeros(3, 2)).is_err());
    }

    proptest! {
        #[test]
        fn both_solvers_match_brute_force(n in 1usize..6, v in proptest::collection::vec(0.0f64..10.0, 25)) {
            let c = Matrix::from_fn(n, n, |i, j| v[i * 5 + j]);
            let (sum, max) = brute(&c);
            let p = min_cost_assignment(&c).unwrap();
            let got: f64 = (0..n).map(|i| c[(i, p[i])]).sum();
            prop_assert!((got - sum).abs() < 1e-9);
            let (q, b) = bottleneck_assignment(&c).unwrap();
            prop_assert_eq!(b, max);
            prop_assert!(q.iter().all_unique());
        }
    }
}
