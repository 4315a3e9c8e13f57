use super::{condition_number, sigma_max, sigma_min, svd};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// `min_{i≠j} |d_i − d_j|`; infinite for fewer than two entries.
pub fn eigenvalue_separation(d: &[f64]) -> f64 {
    let mut s = d.to_vec();
    s.sort_by(f64::total_cmp);
    s.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone)]
pub struct SmallCombination {
    /// Row `k` holds the coefficients expressing `vectors[:, k]` in the
    /// columns of the input.
    pub alpha: Matrix,
    /// Top left singular vectors.
    pub vectors: Matrix,
}

/// Writes each of the top `t` left singular vectors of `M` as `M·α_kᵀ`
/// with `‖α_k‖ = 1/σ_k ≤ 1/eta`.
pub fn small_combination(m: &Matrix, t: usize, eta: f64) -> Result<SmallCombination> {
    if t == 0 || t > m.nrows().min(m.ncols()) {
        return Err(Error::invalid(format!(
            "cannot take {t} singular vectors of a {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    let s = svd(m)?;
    let st = s.sigma[t - 1];
    if !(st >= eta) || st == 0.0 {
        return Err(Error::Precondition(format!("sigma_{t} = {st:e} is below eta = {eta:e}")));
    }
    let mut alpha = Matrix::zeros(t, m.ncols());
    for k in 0..t {
        alpha.set_row(k, &(s.v.column(k).transpose() / s.sigma[k]));
    }
    Ok(SmallCombination {
        alpha,
        vectors: s.u.columns(0, t).into_owned(),
    })
}

/// Right-hand side of the eigenvector perturbation bound for
/// `M̂ = M(I + E) + F` with `M = U·diag(d)·U⁻¹`:
/// `3(σ_max(E)·max|d| + σ_max(F)) / (σ_min(U)·sep(d))`.
///
/// `U` is taken with unit columns. The bound is refused unless
/// `κ(U)(‖ME‖ + ‖F‖) < sep(d)/(2n)`, the regime in which `M̂` is guaranteed
/// diagonalizable with eigenvalues paired one-to-one.
pub fn eig_perturbation_bound(u: &Matrix, d: &[f64], e: &Matrix, f: &Matrix) -> Result<f64> {
    let n = u.nrows();
    if !u.is_square() || d.len() != n || e.shape() != (n, n) || f.shape() != (n, n) {
        return Err(Error::shape(format!(
            "perturbation bound needs square U, E, F of size {} and {} eigenvalues",
            n,
            d.len()
        )));
    }
    let mut un = u.clone();
    for mut c in un.column_iter_mut() {
        let nrm = c.norm();
        if nrm == 0.0 {
            return Err(Error::Precondition("U has a zero column".into()));
        }
        c /= nrm;
    }
    let uinv = un
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Precondition("U is singular".into()))?;
    let dm = Matrix::from_diagonal(&nalgebra::DVector::from_row_slice(d));
    let m = &un * dm * uinv;
    let sep = eigenvalue_separation(d);
    let kappa = condition_number(&un)?;
    let lhs = kappa * (sigma_max(&(&m * e))? + sigma_max(f)?);
    let limit = sep / (2.0 * n as f64);
    if !(lhs < limit) {
        return Err(Error::Precondition(format!(
            "kappa(U)(|ME| + |F|) = {lhs:e} is not below sep(D)/(2n) = {limit:e}"
        )));
    }
    let lambda_max = d.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    Ok(3.0 * (sigma_max(e)? * lambda_max + sigma_max(f)?) / (sigma_min(&un)? * sep))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::eig_nonsymmetric;
    use crate::rng::{gaussian_vec, stream};
    use proptest::prelude::*;

    fn gaussian(rows: usize, cols: usize, seed: u64, label: &str) -> Matrix {
        Matrix::from_vec(rows, cols, gaussian_vec(&mut stream(seed, label, &[]), rows * cols))
    }

    fn brute_sep(d: &[f64]) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..d.len() {
            for j in 0..d.len() {
                if i != j {
                    best = best.min((d[i] - d[j]).abs());
                }
            }
        }
        best
    }

    #[test]
    fn separation_examples() {
        assert_eq!(eigenvalue_separation(&[1.0, 2.0, 4.0]), 1.0);
        assert_eq!(eigenvalue_separation(&[3.0, 3.0]), 0.0);
        let d = gaussian_vec(&mut stream(4, "sep", &[]), 9);
        assert_eq!(eigenvalue_separation(&d), brute_sep(&d));
    }

    #[test]
    fn small_combination_of_identity() {
        let sc = small_combination(&Matrix::identity(3, 3), 3, 1.0).unwrap();
        for k in 0..3 {
            assert!((sc.alpha.row(k).norm() - 1.0).abs() < 1e-15);
        }
        let sc = small_combination(&(Matrix::identity(3, 3) * 2.0), 3, 2.0).unwrap();
        for k in 0..3 {
            assert!((sc.alpha.row(k).norm() - 0.5).abs() < 1e-15);
        }
        let recon = (Matrix::identity(3, 3) * 2.0) * sc.alpha.transpose();
        assert!((recon - &sc.vectors).amax() < 1e-15);
    }

    #[test]
    fn small_combination_precondition() {
        let m = Matrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 0.1]));
        assert!(matches!(small_combination(&m, 2, 0.5), Err(Error::Precondition(_))));
    }

    #[test]
    fn zero_perturbation_gives_zero_bound() {
        let u = Matrix::identity(2, 2);
        let z = Matrix::zeros(2, 2);
        assert_eq!(eig_perturbation_bound(&u, &[1.0, 2.0], &z, &z).unwrap(), 0.0);
    }

    #[test]
    fn bound_dominates_measured_deviation() {
        let u = Matrix::identity(2, 2);
        let f = gaussian(2, 2, 1, "bound-f") * 1e-6;
        let z = Matrix::zeros(2, 2);
        let bound = eig_perturbation_bound(&u, &[1.0, 2.0], &z, &f).unwrap();
        let m = Matrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0])) + &f;
        let e = eig_nonsymmetric(&m).unwrap();
        for c in 0..2 {
            let got = e.eigenvectors.column(c);
            let want = u.column(c);
            let s = got.dot(&want).signum();
            assert!((got * s - want).norm() <= bound);
        }
    }

    #[test]
    fn bound_refuses_large_perturbation() {
        let u = Matrix::identity(2, 2);
        let f = Matrix::from_element(2, 2, 1.0);
        let z = Matrix::zeros(2, 2);
        assert!(matches!(
            eig_perturbation_bound(&u, &[1.0, 2.0], &z, &f),
            Err(Error::Precondition(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn small_combination_norms_and_residual(seed in 0u64..1_000_000, t in 1usize..5) {
            let m = gaussian(6, 8, seed, "smallcomb");
            let s = svd(&m).unwrap();
            let eta = s.sigma[t - 1] * 0.999;
            let sc = small_combination(&m, t, eta).unwrap();
            for k in 0..t {
                prop_assert!(sc.alpha.row(k).norm() <= 1.0 / eta);
            }
            let recon = &m * sc.alpha.transpose();
            prop_assert!((recon - &sc.vectors).amax() <= 1e-9);
        }
    }
}
