//! Planted factor sets for experiments and tests.

use nalgebra::DVector;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::condition_number;
use crate::rng::{self, StreamRng};
use crate::smoothed::{perturb, PerturbationModel};
use crate::tensor::{FactorSet, Matrix};

pub fn gaussian_matrix(g: &mut StreamRng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, rng::gaussian_vec(g, rows * cols))
}

/// Haar-distributed orthogonal matrix (QR of a Gaussian matrix with the
/// sign of `R`'s diagonal folded into `Q`).
pub fn random_orthogonal(g: &mut StreamRng, n: usize) -> Matrix {
    let qr = gaussian_matrix(g, n, n).qr();
    let (mut q, r) = qr.unpack();
    for c in 0..n {
        if r[(c, c)] < 0.0 {
            q.column_mut(c).neg_mut();
        }
    }
    q
}

pub fn normalize_columns(m: &mut Matrix) {
    for mut c in m.column_iter_mut() {
        let n = c.norm();
        if n > 0.0 {
            c /= n;
        }
    }
}

/// Unit-column `n × n` matrix with condition number at most `kappa_max`,
/// built as `Q₁·diag(s)·Q₂` with log-spaced `s` and then column-normalized.
pub fn conditioned_unit_columns(seed: u64, label: &str, n: usize, kappa_max: f64) -> Result<Matrix> {
    if !(kappa_max > 1.0) {
        return Err(Error::invalid(format!("kappa_max must exceed 1, got {kappa_max}")));
    }
    let spread = kappa_max.sqrt();
    for attempt in 0..1000u64 {
        let mut g = rng::stream(seed, label, &[attempt]);
        let q1 = random_orthogonal(&mut g, n);
        let q2 = random_orthogonal(&mut g, n);
        let s = DVector::from_fn(n, |i, _| {
            let t = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
            spread.powf(t) * (1.0 + 0.05 * g.random::<f64>())
        });
        let mut m = q1 * Matrix::from_diagonal(&s) * q2;
        normalize_columns(&mut m);
        if condition_number(&m)? <= kappa_max {
            return Ok(m);
        }
    }
    Err(Error::Precondition(format!("no unit-column matrix with condition number <= {kappa_max} found")))
}

/// Full-rank planted instance for an `n × n × p` tensor: well-conditioned
/// unit-column `U`, `V` and Gaussian `W`.
pub fn planted_full_rank(n: usize, p: usize, kappa_max: f64, seed: u64) -> Result<FactorSet> {
    let u = conditioned_unit_columns(seed, "planted-u", n, kappa_max)?;
    let v = conditioned_unit_columns(seed, "planted-v", n, kappa_max)?;
    let w = gaussian_matrix(&mut rng::stream(seed, "planted-w", &[]), p, n);
    Ok(FactorSet::from_factors(vec![u, v, w])?.canonicalize())
}

/// Order-ℓ instance whose factor columns are ρ-perturbations of random unit
/// vectors.
pub fn planted_perturbed(ell: usize, n: usize, rank: usize, rho: f64, seed: u64) -> Result<FactorSet> {
    let pm = PerturbationModel::new(rho, n)?;
    let factors = (0..ell)
        .map(|j| {
            let mut base = Matrix::zeros(n, rank);
            for c in 0..rank {
                let v = rng::unit_sphere(&mut rng::stream(seed, "planted-base", &[j as u64, c as u64]), n);
                base.column_mut(c).copy_from_slice(&v);
            }
            perturb(&base, &pm, rng::derive_seed(seed, "planted-perturb", &[j as u64]))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FactorSet::from_factors(factors)?.canonicalize())
}
