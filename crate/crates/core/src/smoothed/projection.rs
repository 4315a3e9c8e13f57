use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use super::perturb::PerturbationModel;
use super::sweep::quantile;
use crate::error::{Error, Result};
use crate::linalg::orthonormalize;
use crate::tensor::{kron_vec, Matrix};

const HISTOGRAM_BINS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjectionReport {
    /// `‖Π_V(x̃¹ ⊗ … ⊗ x̃^ℓ)‖` per trial.
    pub norms: Vec<f64>,
    pub min: f64,
    pub q01: f64,
    pub median: f64,
    pub max: f64,
    /// `ρ^ℓ · n^(−3^ℓ)`, the shape of the lower bound.
    pub bound_shape: f64,
    /// Log-spaced bins between the smallest and largest norm.
    pub histogram: Vec<HistogramBin>,
}

/// Projects perturbed product vectors onto the span of `basis` (`n^ℓ` rows).
/// Every trial perturbs each base vector with its own stream.
pub fn projection_experiment(
    basis: &Matrix,
    bases: &[Vec<f64>],
    pm: &PerturbationModel,
    trials: usize,
    seed: u64,
) -> Result<ProjectionReport> {
    let n = pm.dimension;
    let ell = bases.len();
    if ell == 0 || bases.iter().any(|b| b.len() != n) {
        return Err(Error::shape(format!("need at least one base vector of length {n}")));
    }
    let amb = n
        .checked_pow(ell as u32)
        .filter(|&a| a == basis.nrows())
        .ok_or_else(|| Error::shape(format!("basis has {} rows, expected {n}^{ell}", basis.nrows())))?;
    let q = orthonormalize(basis, 1e-10);
    let norms = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut v = vec![1.0];
            for (j, b) in bases.iter().enumerate() {
                v = kron_vec(&v, &pm.perturb_vector(b, seed, "projection", &[t as u64, j as u64])?);
            }
            debug_assert_eq!(v.len(), amb);
            Ok((q.transpose() * DVector::from_vec(v)).norm())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(ProjectionReport {
        min: quantile(&norms, 0.0),
        q01: quantile(&norms, 0.01),
        median: quantile(&norms, 0.5),
        max: quantile(&norms, 1.0),
        bound_shape: pm.rho.powi(ell as i32) * (n as f64).powf(-(3f64.powi(ell as i32))),
        histogram: log_histogram(&norms, HISTOGRAM_BINS),
        norms,
    })
}

fn log_histogram(data: &[f64], bins: usize) -> Vec<HistogramBin> {
    let pos: Vec<f64> = data.iter().copied().filter(|&x| x > 0.0).collect();
    if pos.is_empty() {
        return vec![];
    }
    let lo = pos.iter().copied().fold(f64::INFINITY, f64::min).log10();
    let hi = pos.iter().copied().fold(0.0, f64::max).log10();
    let width = ((hi - lo) / bins as f64).max(f64::MIN_POSITIVE);
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|k| HistogramBin {
            lo: 10f64.powf(lo + k as f64 * width),
            hi: 10f64.powf(lo + (k + 1) as f64 * width),
            count: 0,
        })
        .collect();
    for x in pos {
        let k = (((x.log10() - lo) / width) as usize).min(bins - 1);
        out[k].count += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planted::gaussian_matrix;
    use crate::rng;

    #[test]
    fn full_space_keeps_the_whole_norm() {
        let n = 3;
        let pm = PerturbationModel::new(0.5, n).unwrap();
        let bases = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
        let rep = projection_experiment(&Matrix::identity(9, 9), &bases, &pm, 20, 3).unwrap();
        for (t, &norm) in rep.norms.iter().enumerate() {
            let prod: f64 = (0..2)
                .map(|j| {
                    let x = pm.perturb_vector(&bases[j], 3, "projection", &[t as u64, j as u64]).unwrap();
                    x.iter().map(|v| v * v).sum::<f64>().sqrt()
                })
                .product();
            assert!((norm - prod).abs() < 1e-12);
        }
    }

    #[test]
    fn tiny_perturbation_of_the_spanning_product() {
        let mut b = Matrix::zeros(4, 1);
        b[(0, 0)] = 1.0;
        let pm = PerturbationModel::new(0.01, 2).unwrap();
        let e1 = vec![1.0, 0.0];
        let rep = projection_experiment(&b, &[e1.clone(), e1], &pm, 50, 1).unwrap();
        assert!(rep.min > 0.95 && rep.max < 1.05);
    }

    #[test]
    fn random_half_subspace_has_positive_projections() {
        let g = gaussian_matrix(&mut rng::stream(8, "proj", &[]), 16, 8);
        let pm = PerturbationModel::new(0.1, 4).unwrap();
        let bases = vec![vec![0.5; 4], vec![0.5; 4]];
        let rep = projection_experiment(&g, &bases, &pm, 2000, 2).unwrap();
        assert!(rep.min > 0.0);
        assert_eq!(rep.histogram.iter().map(|b| b.count).sum::<usize>(), 2000);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let pm = PerturbationModel::new(0.1, 3).unwrap();
        assert!(projection_experiment(&Matrix::identity(8, 8), &[vec![0.0; 3], vec![0.0; 3]], &pm, 1, 0).is_err());
    }
}
