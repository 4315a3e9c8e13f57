use super::{column_space, residual_to_span};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeaveOneOut {
    pub distance: f64,
    /// Column attaining the minimum.
    pub column: usize,
    /// Set for single-column input, where the distance falls back to the
    /// column norm.
    pub degenerate: bool,
}

/// `min_i dist(A_i, span{A_j : j ≠ i})`.
pub fn leave_one_out_distance(a: &Matrix) -> Result<LeaveOneOut> {
    let r = a.ncols();
    if r == 0 {
        return Err(Error::invalid("leave-one-out distance of a matrix with no columns"));
    }
    if r == 1 {
        return Ok(LeaveOneOut {
            distance: a.column(0).norm(),
            column: 0,
            degenerate: true,
        });
    }
    let tol = a.nrows().max(r) as f64 * f64::EPSILON;
    let mut best = LeaveOneOut { distance: f64::INFINITY, column: 0, degenerate: false };
    for i in 0..r {
        let others = a.clone().remove_column(i);
        let q = column_space(&others, tol)?;
        let d = residual_to_span(&q, &a.column(i).into_owned());
        if d < best.distance {
            best.distance = d;
            best.column = i;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sigma_min;
    use crate::rng;
    use proptest::prelude::*;

    #[test]
    fn identity_distance_is_one() {
        let l = leave_one_out_distance(&Matrix::identity(4, 4)).unwrap();
        assert!((l.distance - 1.0).abs() < 1e-15);
        assert!(!l.degenerate);
    }

    #[test]
    fn duplicate_column_gives_zero() {
        let a = Matrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 2.0, 2.0, 1.0, -1.0, -1.0, 0.5]);
        assert!(leave_one_out_distance(&a).unwrap().distance < 1e-14);
    }

    #[test]
    fn single_column_is_flagged() {
        let a = Matrix::from_row_slice(2, 1, &[3.0, 4.0]);
        let l = leave_one_out_distance(&a).unwrap();
        assert!(l.degenerate);
        assert_eq!(l.distance, 5.0);
    }

    #[test]
    fn two_columns_match_hand_computation() {
        // Distance from (1,1) to span{(1,0)} is 1, and from (1,0) to span{(1,1)} is 1/√2.
        let a = Matrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let l = leave_one_out_distance(&a).unwrap();
        assert!((l.distance - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert_eq!(l.column, 0);
    }

    proptest! {
        #[test]
        fn sandwich_holds(seed in 0u64..1_000_000, rows in 1usize..13, cols in 2usize..11) {
            prop_assume!(cols <= rows);
            let v = rng::gaussian_vec(&mut rng::stream(seed, "loo", &[]), rows * cols);
            let a = Matrix::from_vec(rows, cols, v);
            let l = leave_one_out_distance(&a).unwrap().distance;
            let s = sigma_min(&a).unwrap();
            prop_assert!(l / (cols as f64).sqrt() <= s + 1e-10);
            prop_assert!(s <= l + 1e-10);
        }
    }
}
