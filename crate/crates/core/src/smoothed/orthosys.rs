use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::blocks::{block, robust_dims_with, ROUNDING_SLACK};
use crate::error::{Error, Result};
use crate::linalg::{null_space, orthonormalize, residual_to_span, small_combination};
use crate::planted::gaussian_matrix;
use crate::rng;
use crate::tensor::Matrix;

const ORTHO_TOL: f64 = 1e-10;

/// `r` matrices of shape `n × m` with unit Frobenius norm whose columns, taken
/// in `column_order`, each keep a component of length at least `theta`
/// outside the span of every earlier-or-equal column of all matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrthogonalSystem {
    pub n: usize,
    pub m: usize,
    #[serde(with = "matrix_rows")]
    pub matrices: Vec<Matrix>,
    pub column_order: Vec<usize>,
    pub theta: f64,
    /// `s = delta_prime · m`.
    pub delta_prime: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Verification {
    pub ok: bool,
    pub worst_residual: f64,
}

mod matrix_rows {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::tensor::Matrix;

    pub fn serialize<S: Serializer>(mats: &[Matrix], s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<Vec<f64>>> = mats
            .iter()
            .map(|m| m.row_iter().map(|r| r.iter().copied().collect()).collect())
            .collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Matrix>, D::Error> {
        let rows = Vec::<Vec<Vec<f64>>>::deserialize(d)?;
        rows.into_iter()
            .map(|m| {
                let nr = m.len();
                let nc = m.first().map_or(0, Vec::len);
                if m.iter().any(|r| r.len() != nc) {
                    return Err(serde::de::Error::custom("ragged matrix rows"));
                }
                Ok(Matrix::from_row_iterator(nr, nc, m.into_iter().flatten()))
            })
            .collect()
    }
}

fn column_vec(m: &Matrix, c: usize) -> DVector<f64> {
    m.column(c).into_owned()
}

fn hstack(cols: &[DVector<f64>], rows: usize) -> Matrix {
    let mut out = Matrix::zeros(rows, cols.len());
    for (k, c) in cols.iter().enumerate() {
        out.set_column(k, c);
    }
    out
}

/// Builds an ordered orthogonal system inside the subspace spanned by
/// `basis` (`n·m` rows, vec index `a·m + i` for entry `(a, i)`).
///
/// Each of the `s` rounds restricts the subspace to matrices vanishing on the
/// columns fixed so far, picks the free column of largest robust dimension,
/// and adds to every `M_j` a member of the restriction whose new column is
/// drawn from an orthonormal frame orthogonal to all columns fixed so far and
/// to the current content of the new column.
pub fn build_orthogonal_system(
    basis: &Matrix,
    n: usize,
    m: usize,
    r: usize,
    s: usize,
    seed: u64,
) -> Result<OrthogonalSystem> {
    if n == 0 || m == 0 || basis.nrows() != n * m {
        return Err(Error::shape(format!(
            "basis has {} rows, expected n*m = {n}*{m}",
            basis.nrows()
        )));
    }
    if r == 0 || s == 0 || s > m {
        return Err(Error::invalid(format!("need r >= 1 and 1 <= s <= m, got r = {r}, s = {s}")));
    }
    let b = orthonormalize(basis, ORTHO_TOL);
    if b.ncols() == 0 {
        return Err(Error::invalid("the subspace is trivial"));
    }
    let delta = b.ncols() as f64 / (n * m) as f64;
    let eta = 1.0 / (m as f64).sqrt();
    let mut mats = vec![Matrix::zeros(n, m); r];
    let mut fixed: Vec<usize> = Vec::with_capacity(s);

    for round in 0..s {
        let bw = if fixed.is_empty() {
            b.clone()
        } else {
            let bj = Matrix::from_fn(n * fixed.len(), b.ncols(), |row, c| {
                let (k, a) = (row / n, row % n);
                b[(a * m + fixed[k], c)]
            });
            &b * null_space(&bj, ORTHO_TOL)?
        };
        let mut dims = if bw.ncols() == 0 { vec![0; m] } else { robust_dims_with(&bw, m, eta)? };
        for &i in &fixed {
            dims[i] = 0;
        }

        // Step 1.
        let need = delta * n as f64 / 2.0;
        let pick = (0..m)
            .filter(|i| !fixed.contains(i) && dims[*i] as f64 >= need)
            .max_by(|&x, &y| dims[x].cmp(&dims[y]).then(y.cmp(&x)));
        let Some(i) = pick else {
            return Err(Error::ConstructionFailed {
                stage: 1,
                detail: format!("round {round}: no free column has robust dimension >= {need:.3}"),
                robust_dims: dims,
            });
        };

        // Step 2.
        let comb = small_combination(&block(&bw, m, i), dims[i], eta * (1.0 - ROUNDING_SLACK))?;
        let mut constraints = Vec::new();
        for mj in &mats {
            for &c in fixed.iter().chain([&i]) {
                constraints.push(column_vec(mj, c));
            }
        }
        let k = orthonormalize(&hstack(&constraints, n), ORTHO_TOL);
        let free = if k.ncols() == 0 {
            Matrix::identity(dims[i], dims[i])
        } else {
            null_space(&(k.transpose() * &comb.vectors), ORTHO_TOL)?
        };
        if free.ncols() < r {
            return Err(Error::ConstructionFailed {
                stage: 2,
                detail: format!(
                    "round {round}, column {i}: {} feasible directions for {r} matrices",
                    free.ncols()
                ),
                robust_dims: dims,
            });
        }
        let g = gaussian_matrix(&mut rng::stream(seed, "orthosys-frame", &[round as u64]), free.ncols(), r);
        let frame = orthonormalize(&(&free * g), ORTHO_TOL);
        if frame.ncols() < r {
            return Err(Error::ConstructionFailed {
                stage: 2,
                detail: format!("round {round}, column {i}: degenerate random frame"),
                robust_dims: dims,
            });
        }

        // Step 3.
        let coeffs = &bw * comb.alpha.transpose() * frame;
        for (j, mj) in mats.iter_mut().enumerate() {
            for a in 0..n {
                for c in 0..m {
                    mj[(a, c)] += coeffs[(a * m + c, j)];
                }
            }
        }
        fixed.push(i);
    }

    for mj in &mut mats {
        let f = mj.norm();
        if f == 0.0 {
            return Err(Error::ConstructionFailed {
                stage: 3,
                detail: "a matrix ended with zero norm".into(),
                robust_dims: vec![],
            });
        }
        *mj /= f;
    }
    Ok(OrthogonalSystem {
        n,
        m,
        matrices: mats,
        column_order: fixed,
        theta: 1.0 / ((n * m * m * m) as f64).sqrt(),
        delta_prime: s as f64 / m as f64,
    })
}

/// Checks the ordered orthogonality by sequential projection and reports
/// the smallest residual seen.
pub fn verify_orthogonal_system(sys: &OrthogonalSystem) -> Verification {
    let mut worst = f64::INFINITY;
    let valid_cols = |c: &usize| sys.matrices.iter().all(|mj| *c < mj.ncols());
    if !sys.column_order.iter().all(valid_cols) {
        return Verification { ok: false, worst_residual: 0.0 };
    }
    for (pos, &c) in sys.column_order.iter().enumerate() {
        let prefix = &sys.column_order[..=pos];
        for (j, mj) in sys.matrices.iter().enumerate() {
            let others: Vec<DVector<f64>> = sys
                .matrices
                .iter()
                .enumerate()
                .flat_map(|(jj, mm)| prefix.iter().map(move |&cc| (jj, mm, cc)))
                .filter(|&(jj, _, cc)| !(jj == j && cc == c))
                .map(|(_, mm, cc)| column_vec(mm, cc))
                .collect();
            let q = orthonormalize(&hstack(&others, mj.nrows()), 1e-12);
            worst = worst.min(residual_to_span(&q, &column_vec(mj, c)));
        }
    }
    Verification { ok: worst >= sys.theta, worst_residual: worst }
}
