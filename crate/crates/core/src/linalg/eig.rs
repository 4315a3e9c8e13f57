use nalgebra::{DVector, Schur};

use super::check_finite;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Real eigendecomposition `M v_i = λ_i v_i`, eigenpairs sorted by
/// ascending eigenvalue, eigenvectors of unit length.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Matrix,
    /// `‖M v_i − λ_i v_i‖₂` per pair.
    pub residuals: Vec<f64>,
}

impl EigenDecomposition {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().fold(0.0, |a, &b| a.max(b))
    }
}

/// Eigendecomposition of a general real square matrix via real Schur form.
///
/// Complex conjugate pairs are reported as [`Error::ComplexEigenvalues`]
/// instead of being returned; callers in this crate redraw their inputs.
pub fn eig_nonsymmetric(m: &Matrix) -> Result<EigenDecomposition> {
    if !m.is_square() {
        return Err(Error::shape(format!("eigendecomposition of a {}x{} matrix", m.nrows(), m.ncols())));
    }
    check_finite(m, "eigendecomposition input")?;
    let n = m.nrows();
    if n == 0 {
        return Ok(EigenDecomposition {
            eigenvalues: vec![],
            eigenvectors: Matrix::zeros(0, 0),
            residuals: vec![],
        });
    }
    let max_iter = 100 * n.max(1);
    let schur = Schur::try_new(m.clone(), f64::EPSILON, max_iter)
        .ok_or(Error::NoConvergence { iterations: max_iter })?;
    let (q, t) = schur.unpack();

    for k in 0..n - 1 {
        if t[(k + 1, k)] != 0.0 {
            let (a, b, c, d) = (t[(k, k)], t[(k, k + 1)], t[(k + 1, k)], t[(k + 1, k + 1)]);
            let half = 0.5 * (a - d);
            let disc = half * half + b * c;
            return Err(Error::ComplexEigenvalues {
                re: 0.5 * (a + d),
                im: (-disc).max(0.0).sqrt(),
            });
        }
    }

    let tnorm = t.norm().max(f64::MIN_POSITIVE);
    let small = 1e-14 * tnorm;
    let mut vectors = Matrix::zeros(n, n);
    for k in 0..n {
        let lambda = t[(k, k)];
        let mut x = DVector::<f64>::zeros(n);
        x[k] = 1.0;
        for i in (0..k).rev() {
            let num: f64 = -(i + 1..=k).map(|j| t[(i, j)] * x[j]).sum::<f64>();
            let den = t[(i, i)] - lambda;
            if den.abs() < small {
                let xnorm = x.norm();
                if num.abs() <= 1e-10 * tnorm * xnorm {
                    x[i] = 0.0;
                } else {
                    return Err(Error::Defective(vec![t[(i, i)], lambda]));
                }
            } else {
                x[i] = num / den;
            }
        }
        let v = &q * x;
        let v = &v / v.norm();
        vectors.set_column(k, &v);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| t[(a, a)].total_cmp(&t[(b, b)]));
    let eigenvalues: Vec<f64> = order.iter().map(|&k| t[(k, k)]).collect();
    let mut eigenvectors = Matrix::zeros(n, n);
    for (c, &k) in order.iter().enumerate() {
        eigenvectors.set_column(c, &vectors.column(k));
    }
    let residuals: Vec<f64> = (0..n)
        .map(|c| {
            let v = eigenvectors.column(c);
            (m * v - v * eigenvalues[c]).norm()
        })
        .collect();
    let worst = residuals.iter().fold(0.0f64, |a: f64, &b| a.max(b));
    if worst > 1e-8 * m.norm().max(f64::MIN_POSITIVE) {
        return Err(Error::NoConvergence { iterations: max_iter });
    }
    Ok(EigenDecomposition { eigenvalues, eigenvectors, residuals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn aligned_error(v: &[f64], w: &[f64]) -> f64 {
        let dot: f64 = v.iter().zip(w).map(|(a, b)| a * b).sum();
        let s = if dot < 0.0 { -1.0 } else { 1.0 };
        v.iter().zip(w).map(|(a, b)| (a - s * b).powi(2)).sum::<f64>().sqrt()
    }

    #[test]
    fn diagonal_matrix() {
        let m = Matrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0, 2.0]));
        let e = eig_nonsymmetric(&m).unwrap();
        assert_eq!(e.eigenvalues, vec![1.0, 2.0, 3.0]);
        let expect = [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]];
        for (c, ex) in expect.iter().enumerate() {
            let v: Vec<f64> = e.eigenvectors.column(c).iter().copied().collect();
            assert!(aligned_error(&v, ex) < 1e-14);
        }
    }

    #[test]
    fn swap_matrix() {
        let m = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let e = eig_nonsymmetric(&m).unwrap();
        assert!((e.eigenvalues[0] + 1.0).abs() < 1e-14);
        assert!((e.eigenvalues[1] - 1.0).abs() < 1e-14);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let v0: Vec<f64> = e.eigenvectors.column(0).iter().copied().collect();
        let v1: Vec<f64> = e.eigenvectors.column(1).iter().copied().collect();
        assert!(aligned_error(&v0, &[h, -h]) < 1e-14);
        assert!(aligned_error(&v1, &[h, h]) < 1e-14);
    }

    #[test]
    fn rotation_reports_complex_pair() {
        let m = Matrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        match eig_nonsymmetric(&m) {
            Err(Error::ComplexEigenvalues { re, im }) => {
                assert!(re.abs() < 1e-14);
                assert!((im - 1.0).abs() < 1e-14);
            }
            other => panic!("expected complex pair, got {other:?}"),
        }
    }

    #[test]
    fn jordan_block_is_defective() {
        let m = Matrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert!(matches!(eig_nonsymmetric(&m), Err(Error::Defective(_))));
    }

    #[test]
    fn identity_has_full_eigenbasis() {
        let e = eig_nonsymmetric(&Matrix::identity(4, 4)).unwrap();
        assert!(e.max_residual() < 1e-15);
        assert!((e.eigenvectors.determinant().abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn planted_diagonalization() {
        let mut r = rng::stream(17, "eig-planted", &[]);
        let x = Matrix::from_vec(3, 3, rng::gaussian_vec(&mut r, 9)) + Matrix::identity(3, 3) * 3.0;
        let d = Matrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 4.0]));
        let m = &x * d * x.clone().try_inverse().unwrap();
        let e = eig_nonsymmetric(&m).unwrap();
        for (c, want) in [1.0, 2.0, 4.0].iter().enumerate() {
            assert!((e.eigenvalues[c] - want).abs() < 1e-10);
            let xc = x.column(c).normalize();
            let got: Vec<f64> = e.eigenvectors.column(c).iter().copied().collect();
            assert!(aligned_error(&got, xc.as_slice()) < 1e-7);
            assert!(e.residuals[c] <= 1e-8 * m.norm());
        }
    }

    #[test]
    fn rejects_rectangular() {
        assert!(matches!(eig_nonsymmetric(&Matrix::zeros(2, 3)), Err(Error::Shape(_))));
    }
}
