use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::perturb::{base_matrix, perturb, BaseFamily, PerturbationModel};
use crate::error::{Error, Result};
use crate::linalg::singular_values;
use crate::rng;
use crate::tensor::{khatri_rao_all, Matrix};

/// Grid of Khatri-Rao conditioning experiments. Every combination of the
/// listed values is one grid point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepGrid {
    pub ns: Vec<usize>,
    pub ranks: Vec<usize>,
    pub orders: Vec<usize>,
    pub rhos: Vec<f64>,
    pub bases: Vec<BaseFamily>,
    pub trials: usize,
    pub seed: u64,
    /// Trials with `σ_min` at or below this count as failures.
    pub failure_threshold: f64,
}

/// One trial of one grid point; the CSV row of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRecord {
    pub n: usize,
    #[serde(rename = "R")]
    pub rank: usize,
    pub ell: usize,
    pub rho: f64,
    pub base: &'static str,
    pub trial: usize,
    pub sigma_min: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub n: usize,
    pub rank: usize,
    pub ell: usize,
    pub rho: f64,
    pub base: BaseFamily,
    pub trials: usize,
    /// In trial order.
    pub sigma_min: Vec<f64>,
    pub min: f64,
    pub q05: f64,
    pub median: f64,
    pub q95: f64,
    pub max: f64,
    pub failures: usize,
    pub wall_ms: f64,
    /// Set when the point was skipped.
    pub note: Option<String>,
}

/// Linear-interpolated quantile of unsorted data (`q` in `[0, 1]`).
pub fn quantile(data: &[f64], q: f64) -> f64 {
    if data.is_empty() {
        return f64::NAN;
    }
    let mut s = data.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (pos - lo as f64) * (s[hi] - s[lo])
}

fn point_key(n: usize, r: usize, ell: usize, rho: f64, base: BaseFamily) -> [u64; 5] {
    [n as u64, r as u64, ell as u64, rho.to_bits(), base as u64]
}

/// `σ_R` of the ℓ-wise Khatri-Rao product of independently perturbed base
/// matrices.
fn trial(n: usize, r: usize, ell: usize, rho: f64, base: BaseFamily, t: usize, seed: u64) -> Result<f64> {
    let pm = PerturbationModel::new(rho, n)?;
    let key = point_key(n, r, ell, rho, base);
    let mats = (0..ell)
        .map(|j| {
            let mut idx = key.to_vec();
            idx.extend([t as u64, j as u64]);
            let bseed = rng::derive_seed(seed, "sweep-base", &idx);
            let pseed = rng::derive_seed(seed, "sweep-perturb", &idx);
            perturb(&base_matrix(base, n, r, bseed), &pm, pseed)
        })
        .collect::<Result<Vec<Matrix>>>()?;
    let refs: Vec<&Matrix> = mats.iter().collect();
    let kr = khatri_rao_all(&refs)?;
    Ok(singular_values(&kr)?.get(r - 1).copied().unwrap_or(0.0))
}

/// Runs every grid point. Points with `R` above `n^ℓ` are skipped with a
/// note. Trials run in parallel; each has its own stream keyed by the grid
/// values and trial index, so results do not depend on scheduling or on
/// which other points are in the grid.
pub fn kr_sigma_min_sweep(grid: &SweepGrid) -> Result<(Vec<SweepResult>, Vec<SweepRecord>)> {
    if grid.trials == 0 {
        return Err(Error::invalid("a sweep needs at least one trial"));
    }
    let mut points = Vec::new();
    for &n in &grid.ns {
        for &r in &grid.ranks {
            for &ell in &grid.orders {
                for &rho in &grid.rhos {
                    for &base in &grid.bases {
                        if n == 0 || r == 0 || ell == 0 {
                            return Err(Error::invalid("n, R and ell must be positive"));
                        }
                        PerturbationModel::new(rho, n)?;
                        points.push((n, r, ell, rho, base));
                    }
                }
            }
        }
    }
    let jobs: Vec<(usize, usize)> = points
        .iter()
        .enumerate()
        .filter(|(_, p)| fits(p.0, p.1, p.2))
        .flat_map(|(i, _)| (0..grid.trials).map(move |t| (i, t)))
        .collect();
    let outcomes: Vec<(usize, usize, f64, f64)> = jobs
        .par_iter()
        .map(|&(i, t)| {
            let (n, r, ell, rho, base) = points[i];
            let start = Instant::now();
            let s = trial(n, r, ell, rho, base, t, grid.seed)?;
            Ok((i, t, s, start.elapsed().as_secs_f64() * 1e3))
        })
        .collect::<Result<_>>()?;

    let mut results = Vec::with_capacity(points.len());
    let mut records = Vec::with_capacity(outcomes.len());
    for (i, &(n, r, ell, rho, base)) in points.iter().enumerate() {
        let mut res = SweepResult {
            n,
            rank: r,
            ell,
            rho,
            base,
            trials: 0,
            sigma_min: vec![],
            min: f64::NAN,
            q05: f64::NAN,
            median: f64::NAN,
            q95: f64::NAN,
            max: f64::NAN,
            failures: 0,
            wall_ms: 0.0,
            note: None,
        };
        if !fits(n, r, ell) {
            res.note = Some(format!("skipped: R = {r} exceeds n^ell = {}", dim(n, ell)));
            results.push(res);
            continue;
        }
        for &(_, t, s, ms) in outcomes.iter().filter(|o| o.0 == i) {
            res.sigma_min.push(s);
            res.wall_ms += ms;
            records.push(SweepRecord {
                n,
                rank: r,
                ell,
                rho,
                base: base.name(),
                trial: t,
                sigma_min: s,
                wall_ms: ms,
            });
        }
        res.trials = res.sigma_min.len();
        res.failures = res.sigma_min.iter().filter(|&&s| s <= grid.failure_threshold).count();
        res.min = quantile(&res.sigma_min, 0.0);
        res.q05 = quantile(&res.sigma_min, 0.05);
        res.median = quantile(&res.sigma_min, 0.5);
        res.q95 = quantile(&res.sigma_min, 0.95);
        res.max = quantile(&res.sigma_min, 1.0);
        results.push(res);
    }
    Ok((results, records))
}

fn dim(n: usize, ell: usize) -> u128 {
    (n as u128).saturating_pow(ell as u32)
}

fn fits(n: usize, r: usize, ell: usize) -> bool {
    r as u128 <= dim(n, ell)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(ns: Vec<usize>, ranks: Vec<usize>, bases: Vec<BaseFamily>, trials: usize) -> SweepGrid {
        SweepGrid {
            ns,
            ranks,
            orders: vec![2],
            rhos: vec![0.1],
            bases,
            trials,
            seed: 5,
            failure_threshold: 1e-9,
        }
    }

    #[test]
    fn single_column_sigma_is_product_of_norms() {
        let (res, rec) = kr_sigma_min_sweep(&grid(vec![2], vec![1], vec![BaseFamily::Unit], 3)).unwrap();
        assert_eq!(res[0].trials, 3);
        assert_eq!(rec.len(), 3);
        for r in &rec {
            assert!(r.sigma_min > 0.5 && r.sigma_min < 2.0);
        }
    }

    #[test]
    fn oversized_points_are_skipped() {
        let (res, rec) = kr_sigma_min_sweep(&grid(vec![2], vec![5], vec![BaseFamily::Zero], 2)).unwrap();
        assert!(res[0].note.is_some());
        assert!(rec.is_empty());
    }

    #[test]
    fn results_do_not_depend_on_grid_composition() {
        let (a, _) = kr_sigma_min_sweep(&grid(vec![4], vec![6], vec![BaseFamily::Rank1], 4)).unwrap();
        let (b, _) = kr_sigma_min_sweep(&grid(vec![3, 4], vec![6], BaseFamily::ALL.to_vec(), 4)).unwrap();
        let same = b.iter().find(|r| r.n == 4 && r.base == BaseFamily::Rank1).unwrap();
        assert_eq!(a[0].sigma_min, same.sigma_min);
    }

    #[test]
    fn quantiles_are_monotone() {
        let d = [5.0, 1.0, 3.0, 2.0, 4.0];
        assert_eq!(quantile(&d, 0.5), 3.0);
        assert_eq!(quantile(&d, 0.0), 1.0);
        assert_eq!(quantile(&d, 1.0), 5.0);
        assert_eq!(quantile(&d, 0.25), 2.0);
    }
}
