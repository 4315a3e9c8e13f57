use itertools::Itertools;
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::Serialize;

use super::{sigma_max, singular_values};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{khatri_rao, Matrix};

pub const DEFAULT_SUBSET_BUDGET: u128 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum KrankMode {
    Exhaustive,
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustRankReport {
    pub k_rank: usize,
    /// Reciprocal of the smallest `σ_k` seen over the subsets of the accepted
    /// size; infinite when `k_rank` is 0.
    pub tau: f64,
    pub mode: KrankMode,
    pub sets_checked: u64,
    /// Only exhaustive enumeration certifies the result.
    pub certified: bool,
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

fn submatrix(a: &Matrix, cols: &[usize]) -> Matrix {
    a.select_columns(cols)
}

/// `σ_k` of the `k` selected columns.
fn sigma_k(a: &Matrix, cols: &[usize]) -> f64 {
    let k = cols.len();
    singular_values(&submatrix(a, cols))
        .ok()
        .and_then(|s| s.get(k - 1).copied())
        .unwrap_or(0.0)
}

fn level_cap(a: &Matrix, max_k: usize) -> usize {
    max_k.min(a.ncols()).min(a.nrows())
}

/// Largest `k ≤ max_k` such that every `k`-column submatrix has
/// `σ_k ≥ threshold`, by enumeration of all subsets level by level.
fn enumerate(a: &Matrix, threshold: f64, max_k: usize, budget: u128) -> Result<RobustRankReport> {
    let r = a.ncols();
    let cap = level_cap(a, max_k);
    let count: u128 = (1..=cap).map(|k| binomial(r, k)).sum();
    if count > budget {
        return Err(Error::BudgetExceeded { count, budget });
    }
    let mut report = RobustRankReport {
        k_rank: 0,
        tau: f64::INFINITY,
        mode: KrankMode::Exhaustive,
        sets_checked: 0,
        certified: true,
    };
    for k in 1..=cap {
        let subsets: Vec<Vec<usize>> = (0..r).combinations(k).collect();
        report.sets_checked += subsets.len() as u64;
        let worst = subsets
            .par_iter()
            .map(|s| sigma_k(a, s))
            .reduce(|| f64::INFINITY, f64::min);
        if worst < threshold || (threshold == 0.0 && worst == 0.0) {
            break;
        }
        report.k_rank = k;
        report.tau = 1.0 / worst;
    }
    Ok(report)
}

/// Certified τ-robust Kruskal rank.
pub fn krank_exhaustive(a: &Matrix, tau: f64, max_k: usize, budget: u128) -> Result<RobustRankReport> {
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("tau must be positive, got {tau}")));
    }
    enumerate(a, 1.0 / tau, max_k, budget)
}

/// Exact Kruskal rank: subsets count as independent when `σ_k` exceeds
/// `1e-9·σ_max(A)`.
pub fn krank_exact(a: &Matrix, budget: u128) -> Result<usize> {
    let tol = 1e-9 * sigma_max(a)?;
    Ok(enumerate(a, tol, a.ncols(), budget)?.k_rank)
}

/// Upper-bound estimate of the τ-robust Kruskal rank from `samples` random
/// subsets per level. Not certified: an unsampled bad subset can exist.
pub fn krank_sampled(a: &Matrix, tau: f64, max_k: usize, samples: usize, seed: u64) -> Result<RobustRankReport> {
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("tau must be positive, got {tau}")));
    }
    let r = a.ncols();
    let cap = level_cap(a, max_k);
    let threshold = 1.0 / tau;
    let mut report = RobustRankReport {
        k_rank: 0,
        tau: f64::INFINITY,
        mode: KrankMode::Sampled,
        sets_checked: 0,
        certified: false,
    };
    for k in 1..=cap {
        let worst = (0..samples)
            .into_par_iter()
            .map(|t| {
                let mut g = rng::stream(seed, "krank-sample", &[k as u64, t as u64]);
                let mut s = sample(&mut g, r, k).into_vec();
                s.sort_unstable();
                sigma_k(a, &s)
            })
            .reduce(|| f64::INFINITY, f64::min);
        report.sets_checked += samples as u64;
        if worst < threshold {
            break;
        }
        report.k_rank = k;
        report.tau = 1.0 / worst;
    }
    Ok(report)
}

/// Checks `kr(U⊙V) ≥ min(kr(U) + kr(V) − 1, R)` with exact k-ranks.
pub fn krank_additive_check(u: &Matrix, v: &Matrix) -> Result<bool> {
    let kr = khatri_rao(u, v)?;
    let r = u.ncols();
    let ku = krank_exact(u, DEFAULT_SUBSET_BUDGET)?;
    let kv = krank_exact(v, DEFAULT_SUBSET_BUDGET)?;
    let kk = krank_exact(&kr, DEFAULT_SUBSET_BUDGET)?;
    Ok(kk + 1 >= (ku + kv).min(r + 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{gaussian_vec, stream};
    use proptest::prelude::*;

    fn gaussian(rows: usize, cols: usize, seed: u64) -> Matrix {
        Matrix::from_vec(rows, cols, gaussian_vec(&mut stream(seed, "krank-test", &[]), rows * cols))
    }

    /// Independent oracle: rank of every subset by Gaussian elimination with
    /// partial pivoting.
    fn rank_by_elimination(a: &Matrix, tol: f64) -> usize {
        let mut m = a.clone();
        let (rows, cols) = m.shape();
        let mut rank = 0;
        for c in 0..cols {
            if rank == rows {
                break;
            }
            let (p, val) = (rank..rows)
                .map(|i| (i, m[(i, c)].abs()))
                .fold((rank, -1.0), |b, x| if x.1 > b.1 { x } else { b });
            if val <= tol {
                continue;
            }
            m.swap_rows(rank, p);
            for i in rank + 1..rows {
                let f = m[(i, c)] / m[(rank, c)];
                for j in c..cols {
                    m[(i, j)] -= f * m[(rank, j)];
                }
            }
            rank += 1;
        }
        rank
    }

    fn oracle_krank(a: &Matrix) -> usize {
        let r = a.ncols();
        let mut best = 0;
        for k in 1..=r.min(a.nrows()) {
            let all = (0..r)
                .combinations(k)
                .all(|s| rank_by_elimination(&a.select_columns(&s), 1e-9) == k);
            if !all {
                break;
            }
            best = k;
        }
        best
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(8, 3), 56);
        assert_eq!(binomial(5, 0), 1);
        assert_eq!(binomial(5, 5), 1);
        assert_eq!(binomial(40, 20), 137_846_528_820);
    }

    #[test]
    fn identity_has_full_robust_rank() {
        let r = krank_exhaustive(&Matrix::identity(4, 4), 2.0, 4, DEFAULT_SUBSET_BUDGET).unwrap();
        assert_eq!(r.k_rank, 4);
        assert!((r.tau - 1.0).abs() < 1e-12);
        assert!(r.certified);
        assert_eq!(r.sets_checked, 4 + 6 + 4 + 1);
    }

    #[test]
    fn parallel_columns_give_rank_one() {
        let a = Matrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, 1.0, 2.0, 1.0, 0.0, 0.0, 1.0]);
        let r = krank_exhaustive(&a, 1e9, 3, DEFAULT_SUBSET_BUDGET).unwrap();
        assert_eq!(r.k_rank, 1);
        assert_eq!(krank_exact(&a, DEFAULT_SUBSET_BUDGET).unwrap(), 1);
    }

    #[test]
    fn random_wide_gaussian_has_full_krank() {
        let a = gaussian(4, 6, 21);
        assert_eq!(krank_exact(&a, DEFAULT_SUBSET_BUDGET).unwrap(), 4);
        assert_eq!(oracle_krank(&a), 4);
    }

    #[test]
    fn budget_is_enforced() {
        let a = gaussian(30, 40, 2);
        match krank_exhaustive(&a, 10.0, 20, DEFAULT_SUBSET_BUDGET) {
            Err(Error::BudgetExceeded { count, budget }) => {
                assert!(count > budget);
                assert_eq!(budget, DEFAULT_SUBSET_BUDGET);
            }
            other => panic!("expected refusal, got {other:?}"),
        }
    }

    #[test]
    fn sampled_mode_is_an_uncertified_upper_bound() {
        let a = gaussian(4, 6, 8);
        let exact = krank_exhaustive(&a, 100.0, 4, DEFAULT_SUBSET_BUDGET).unwrap();
        let est = krank_sampled(&a, 100.0, 4, 5, 3).unwrap();
        assert!(!est.certified);
        assert!(est.k_rank >= exact.k_rank);
        assert_eq!(est, krank_sampled(&a, 100.0, 4, 5, 3).unwrap());
    }

    #[test]
    fn additivity_examples() {
        let id = Matrix::identity(3, 3);
        assert!(krank_additive_check(&id, &id).unwrap());
        let u = gaussian(3, 5, 4);
        let v = gaussian(3, 5, 5);
        assert!(krank_additive_check(&u, &v).unwrap());
        let mut w = u.clone();
        let c0 = w.column(0).into_owned();
        w.set_column(1, &c0);
        assert_eq!(krank_exact(&w, DEFAULT_SUBSET_BUDGET).unwrap(), 1);
        assert!(krank_additive_check(&w, &v).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn exact_krank_matches_elimination_oracle(seed in 0u64..100_000, rows in 2usize..5, cols in 2usize..7, dup in any::<bool>()) {
            let mut a = gaussian(rows, cols, seed);
            if dup {
                let c = a.column(0) * 3.0;
                a.set_column(cols - 1, &c);
            }
            prop_assert_eq!(krank_exact(&a, DEFAULT_SUBSET_BUDGET).unwrap(), oracle_krank(&a));
        }
    }
}
