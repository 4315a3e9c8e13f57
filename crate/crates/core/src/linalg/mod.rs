//! Dense matrix kernels: SVD, nonsymmetric eigendecomposition, subspace
//! helpers, and the spectral quantities the decomposition relies on.

mod eig;
mod krank;
mod loo;
mod spectral;

pub use eig::{eig_nonsymmetric, EigenDecomposition};
pub use krank::{
    krank_additive_check, krank_exact, krank_exhaustive, krank_sampled, KrankMode, RobustRankReport,
    DEFAULT_SUBSET_BUDGET,
};
pub use loo::{leave_one_out_distance, LeaveOneOut};
pub use spectral::{
    eig_perturbation_bound, eigenvalue_separation, small_combination, SmallCombination,
};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Thin singular value decomposition `A = U·diag(σ)·Vᵀ` with σ descending.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub v: Matrix,
}

impl Svd {
    pub fn sigma_max(&self) -> f64 {
        self.sigma.first().copied().unwrap_or(0.0)
    }

    pub fn sigma_min(&self) -> f64 {
        self.sigma.last().copied().unwrap_or(0.0)
    }

    /// Number of singular values above `tol`.
    pub fn rank(&self, tol: f64) -> usize {
        self.sigma.iter().filter(|&&s| s > tol).count()
    }

    pub fn recompose(&self) -> Matrix {
        let mut us = self.u.clone();
        for (k, &s) in self.sigma.iter().enumerate() {
            us.column_mut(k).scale_mut(s);
        }
        us * self.v.transpose()
    }
}

pub(crate) fn check_finite(a: &Matrix, what: &'static str) -> Result<()> {
    if a.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

pub fn svd(a: &Matrix) -> Result<Svd> {
    check_finite(a, "svd input")?;
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Ok(Svd {
            u: Matrix::zeros(m, 0),
            sigma: vec![],
            v: Matrix::zeros(n, 0),
        });
    }
    let fa = faer::Mat::<f64>::from_fn(m, n, |i, j| a[(i, j)]);
    let d = fa.thin_svd().map_err(|_| Error::NoConvergence { iterations: 0 })?;
    let k = m.min(n);
    let (u, sv, v) = (d.U(), d.S().column_vector(), d.V());
    Ok(Svd {
        u: Matrix::from_fn(m, k, |i, j| u[(i, j)]),
        sigma: (0..k).map(|i| sv[i]).collect(),
        v: Matrix::from_fn(n, k, |i, j| v[(i, j)]),
    })
}

pub fn singular_values(a: &Matrix) -> Result<Vec<f64>> {
    Ok(svd(a)?.sigma)
}

/// Smallest of the `min(m, n)` singular values.
pub fn sigma_min(a: &Matrix) -> Result<f64> {
    Ok(singular_values(a)?.last().copied().unwrap_or(0.0))
}

pub fn sigma_max(a: &Matrix) -> Result<f64> {
    Ok(singular_values(a)?.first().copied().unwrap_or(0.0))
}

/// `σ_max / σ_min`, infinite for rank-deficient input.
pub fn condition_number(a: &Matrix) -> Result<f64> {
    let s = singular_values(a)?;
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => Ok(hi / lo),
        (Some(_), Some(_)) => Ok(f64::INFINITY),
        _ => Ok(0.0),
    }
}

fn default_rank_tol(svd: &Svd, rows: usize, cols: usize) -> f64 {
    rows.max(cols) as f64 * f64::EPSILON * svd.sigma_max()
}

/// Minimum-norm least-squares solution of `A X = B` through the truncated
/// pseudoinverse (singular values below `max(m,n)·ε·σ_max` dropped).
pub fn lstsq(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.nrows() != b.nrows() {
        return Err(Error::shape(format!(
            "least squares with {} equations but right-hand side has {} rows",
            a.nrows(),
            b.nrows()
        )));
    }
    let s = svd(a)?;
    let tol = default_rank_tol(&s, a.nrows(), a.ncols());
    let mut utb = s.u.transpose() * b;
    for (k, &sig) in s.sigma.iter().enumerate() {
        let inv = if sig > tol { 1.0 / sig } else { 0.0 };
        utb.row_mut(k).scale_mut(inv);
    }
    Ok(&s.v * utb)
}

pub fn pseudo_inverse(a: &Matrix) -> Result<Matrix> {
    lstsq(a, &Matrix::identity(a.nrows(), a.nrows()))
}

/// Orthonormal basis of the column space (rank decided at `rel_tol·σ_max`).
pub fn column_space(a: &Matrix, rel_tol: f64) -> Result<Matrix> {
    let s = svd(a)?;
    let r = s.rank(rel_tol * s.sigma_max());
    Ok(s.u.columns(0, r).into_owned())
}

/// Orthonormal basis of `{x : A x = 0}`; a direction counts as null when its
/// singular value is at most `rel_tol·σ_max(A)`.
pub fn null_space(a: &Matrix, rel_tol: f64) -> Result<Matrix> {
    check_finite(a, "null space input")?;
    let (m, n) = a.shape();
    if m == 0 || a.iter().all(|&x| x == 0.0) {
        return Ok(Matrix::identity(n, n));
    }
    // Left singular vectors of a square padding of Aᵀ form a complete basis.
    let mut at = Matrix::zeros(n, n.max(m));
    at.columns_mut(0, m).copy_from(&a.transpose());
    let s = svd(&at)?;
    let tol = rel_tol * s.sigma_max();
    let keep: Vec<usize> = (0..n).filter(|&k| s.sigma[k] <= tol).collect();
    let mut out = Matrix::zeros(n, keep.len());
    for (c, &k) in keep.iter().enumerate() {
        out.set_column(c, &s.u.column(k));
    }
    Ok(out)
}

/// Modified Gram-Schmidt with a second pass when cancellation removes more
/// than half of a vector's norm. Columns whose residual is at most
/// `drop_tol` times their original norm are skipped.
pub fn orthonormalize(a: &Matrix, drop_tol: f64) -> Matrix {
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(a.ncols());
    for c in 0..a.ncols() {
        let mut v = a.column(c).into_owned();
        let orig = v.norm();
        if orig == 0.0 {
            continue;
        }
        for _pass in 0..2 {
            let before = v.norm();
            for q in &basis {
                let proj = q.dot(&v);
                v.axpy(-proj, q, 1.0);
            }
            if v.norm() > 0.5 * before || v.norm() <= 1e-10 * orig {
                break;
            }
        }
        let nrm = v.norm();
        if nrm > drop_tol * orig {
            basis.push(v / nrm);
        }
    }
    let mut out = DMatrix::zeros(a.nrows(), basis.len());
    for (c, q) in basis.iter().enumerate() {
        out.set_column(c, q);
    }
    out
}

/// Distance from `x` to the column span of the orthonormal matrix `q`.
pub fn residual_to_span(q: &Matrix, x: &DVector<f64>) -> f64 {
    if q.ncols() == 0 {
        return x.norm();
    }
    let coeffs = q.transpose() * x;
    (x - q * coeffs).norm()
}
