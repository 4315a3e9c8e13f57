use crate::error::{Error, Result};
use crate::linalg::singular_values;
use crate::tensor::Matrix;

/// Singular values of an orthonormal basis equal to the threshold in exact
/// arithmetic may land a few ulps below it.
pub(crate) const ROUNDING_SLACK: f64 = 1e-10;

/// Rows of block `i` of a `p1·p2`-row basis: coordinates `(a, i)` at the
/// row-major index `a·p2 + i`.
pub(crate) fn block(basis: &Matrix, p2: usize, i: usize) -> Matrix {
    let p1 = basis.nrows() / p2;
    Matrix::from_fn(p1, basis.ncols(), |a, c| basis[(a * p2 + i, c)])
}

/// Robust dimension of every column of a subspace of `p1 × p2` matrices:
/// `d_i` counts the singular values of block `B_i` that are at least
/// `1/√p2`. The basis must be orthonormal.
pub fn robust_column_dimensions(basis: &Matrix, p1: usize, p2: usize) -> Result<Vec<usize>> {
    if p1 == 0 || p2 == 0 || p1.checked_mul(p2) != Some(basis.nrows()) {
        return Err(Error::shape(format!(
            "basis has {} rows, expected p1*p2 = {p1}*{p2}",
            basis.nrows()
        )));
    }
    robust_dims_with(basis, p2, 1.0 / (p2 as f64).sqrt())
}

pub(crate) fn robust_dims_with(basis: &Matrix, p2: usize, threshold: f64) -> Result<Vec<usize>> {
    if basis.ncols() == 0 {
        return Ok(vec![0; p2]);
    }
    (0..p2)
        .map(|i| {
            let s = singular_values(&block(basis, p2, i))?;
            Ok(s.iter().filter(|&&x| x >= threshold * (1.0 - ROUNDING_SLACK)).count())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::orthonormalize;
    use crate::planted::gaussian_matrix;
    use crate::rng;
    use proptest::prelude::*;

    #[test]
    fn full_space_has_full_blocks() {
        let d = robust_column_dimensions(&Matrix::identity(12, 12), 3, 4).unwrap();
        assert_eq!(d, vec![3; 4]);
    }

    #[test]
    fn single_block_subspace() {
        // Coordinates (a, 0) for every a.
        let (p1, p2) = (3, 4);
        let mut b = Matrix::zeros(p1 * p2, p1);
        for a in 0..p1 {
            b[(a * p2, a)] = 1.0;
        }
        assert_eq!(robust_column_dimensions(&b, p1, p2).unwrap(), vec![3, 0, 0, 0]);
    }

    #[test]
    fn random_subspace_satisfies_the_sum_bound() {
        let g = gaussian_matrix(&mut rng::stream(4, "blocks", &[]), 16, 8);
        let b = orthonormalize(&g, 1e-10);
        let d = robust_column_dimensions(&b, 4, 4).unwrap();
        assert!(d.iter().sum::<usize>() >= 8, "{d:?}");
    }

    #[test]
    fn wrong_shape_is_rejected() {
        assert!(robust_column_dimensions(&Matrix::identity(12, 12), 5, 2).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn sum_of_robust_dims_bounds_dimension(p1 in 1usize..6, p2 in 1usize..6, frac in 0.05f64..1.0, seed in any::<u64>()) {
            let amb = p1 * p2;
            let d = ((frac * amb as f64).ceil() as usize).clamp(1, amb);
            let g = gaussian_matrix(&mut rng::stream(seed, "blocks-prop", &[]), amb, d);
            let b = orthonormalize(&g, 1e-10);
            let dims = robust_column_dimensions(&b, p1, p2).unwrap();
            prop_assert!(dims.iter().sum::<usize>() >= b.ncols());
            prop_assert!(dims.iter().all(|&x| x <= p1));
        }
    }
}
