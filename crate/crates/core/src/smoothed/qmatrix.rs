use rayon::prelude::*;
use serde::Serialize;

use super::orthosys::OrthogonalSystem;
use super::perturb::PerturbationModel;
use super::sweep::quantile;
use crate::error::{Error, Result};
use crate::linalg::singular_values;
use crate::tensor::Matrix;

/// `Q(x)` with row `j` equal to `xᵀ·M_j`.
pub fn q_matrix(sys: &OrthogonalSystem, x: &[f64]) -> Result<Matrix> {
    if x.len() != sys.n {
        return Err(Error::shape(format!("x has length {}, expected {}", x.len(), sys.n)));
    }
    let r = sys.matrices.len();
    let mut q = Matrix::zeros(r, sys.m);
    for (j, mj) in sys.matrices.iter().enumerate() {
        for c in 0..sys.m {
            q[(j, c)] = (0..sys.n).map(|a| x[a] * mj[(a, c)]).sum();
        }
    }
    Ok(q)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QExperiment {
    /// The singular value index recorded, `⌈r/2⌉` (1-based).
    pub index: usize,
    /// `σ_index(Q(x̃))` per trial.
    pub samples: Vec<f64>,
    /// `ρθ/n⁴`.
    pub threshold: f64,
    pub fraction_below: f64,
    pub median: f64,
}

/// Perturbs `base` once per trial and records `σ_⌈r/2⌉(Q(x̃))`.
pub fn q_matrix_experiment(
    sys: &OrthogonalSystem,
    base: &[f64],
    pm: &PerturbationModel,
    trials: usize,
    seed: u64,
) -> Result<QExperiment> {
    if pm.dimension != sys.n || sys.matrices.is_empty() {
        return Err(Error::shape(format!(
            "perturbation dimension {} for a system with n = {} and {} matrices",
            pm.dimension,
            sys.n,
            sys.matrices.len()
        )));
    }
    let index = sys.matrices.len().div_ceil(2);
    let samples = (0..trials)
        .into_par_iter()
        .map(|t| {
            let x = pm.perturb_vector(base, seed, "q-matrix", &[t as u64])?;
            let s = singular_values(&q_matrix(sys, &x)?)?;
            Ok(s.get(index - 1).copied().unwrap_or(0.0))
        })
        .collect::<Result<Vec<f64>>>()?;
    let threshold = pm.rho * sys.theta / (sys.n as f64).powi(4);
    let below = samples.iter().filter(|&&s| s < threshold).count();
    Ok(QExperiment {
        index,
        fraction_below: if trials == 0 { 0.0 } else { below as f64 / trials as f64 },
        median: quantile(&samples, 0.5),
        samples,
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smoothed::build_orthogonal_system;

    fn disjoint_system() -> OrthogonalSystem {
        // M_1 = e1 e1ᵀ, M_2 = e1 e2ᵀ in 2 × 2.
        let mut m1 = Matrix::zeros(2, 2);
        let mut m2 = Matrix::zeros(2, 2);
        m1[(0, 0)] = 1.0;
        m2[(0, 1)] = 1.0;
        OrthogonalSystem {
            n: 2,
            m: 2,
            matrices: vec![m1, m2],
            column_order: vec![0, 1],
            theta: 1.0 / 32f64.sqrt(),
            delta_prime: 1.0,
        }
    }

    #[test]
    fn rows_pick_out_first_row_entries() {
        let sys = disjoint_system();
        let q = q_matrix(&sys, &[0.9, 0.3]).unwrap();
        assert_eq!(q, Matrix::from_row_slice(2, 2, &[0.9, 0.0, 0.0, 0.9]));
        let s = singular_values(&q).unwrap();
        assert!((s[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn built_systems_stay_above_the_threshold() {
        let (n, m) = (9, 6);
        let sys = build_orthogonal_system(&Matrix::identity(n * m, n * m), n, m, 2, 1, 4).unwrap();
        let pm = PerturbationModel::new(0.1, n).unwrap();
        let e = q_matrix_experiment(&sys, &vec![0.0; n], &pm, 200, 1).unwrap();
        assert_eq!(e.index, 1);
        assert_eq!(e.samples.len(), 200);
        assert!(e.fraction_below <= 0.01, "{}", e.fraction_below);
    }

    #[test]
    fn sigma_is_linear_in_rho_from_the_origin() {
        let sys = disjoint_system();
        let lo = q_matrix_experiment(&sys, &[0.0, 0.0], &PerturbationModel::new(0.1, 2).unwrap(), 50, 2).unwrap();
        let hi = q_matrix_experiment(&sys, &[0.0, 0.0], &PerturbationModel::new(0.2, 2).unwrap(), 50, 2).unwrap();
        assert!((hi.median / lo.median - 2.0).abs() < 1e-12);
    }
}
