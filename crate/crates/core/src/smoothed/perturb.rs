use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Matrix;

/// Adds i.i.d. `N(0, ρ²/n)` noise to every coordinate of `n`-dimensional
/// vectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationModel {
    pub rho: f64,
    pub dimension: usize,
}

impl PerturbationModel {
    pub fn new(rho: f64, dimension: usize) -> Result<Self> {
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::invalid(format!("rho must be positive, got {rho}")));
        }
        if dimension == 0 {
            return Err(Error::invalid("perturbation dimension must be positive"));
        }
        Ok(Self { rho, dimension })
    }

    pub fn std_dev(&self) -> f64 {
        self.rho / (self.dimension as f64).sqrt()
    }

    /// Perturbs a single vector using the stream `(seed, label, indices)`.
    pub fn perturb_vector(&self, x: &[f64], seed: u64, label: &str, indices: &[u64]) -> Result<Vec<f64>> {
        if x.len() != self.dimension {
            return Err(Error::shape(format!(
                "vector of length {} for a {}-dimensional perturbation",
                x.len(),
                self.dimension
            )));
        }
        let sd = self.std_dev();
        let mut g = rng::stream(seed, label, indices);
        Ok(x.iter()
            .map(|&v| v + sd * g.sample::<f64, _>(StandardNormal))
            .collect())
    }
}

/// ρ-perturbation of every column, each column with its own stream.
pub fn perturb(columns: &Matrix, pm: &PerturbationModel, seed: u64) -> Result<Matrix> {
    if columns.nrows() != pm.dimension {
        return Err(Error::shape(format!(
            "{} rows for a {}-dimensional perturbation",
            columns.nrows(),
            pm.dimension
        )));
    }
    let mut out = columns.clone();
    for c in 0..columns.ncols() {
        let col: Vec<f64> = columns.column(c).iter().copied().collect();
        let p = pm.perturb_vector(&col, seed, "perturb-column", &[c as u64])?;
        out.column_mut(c).copy_from_slice(&p);
    }
    Ok(out)
}

/// Base matrices the smoothed sweeps start from before perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum BaseFamily {
    Zero,
    /// Independent uniformly random unit columns.
    Unit,
    /// Every column equal to one random unit vector.
    Rank1,
}

impl BaseFamily {
    pub const ALL: [BaseFamily; 3] = [BaseFamily::Zero, BaseFamily::Unit, BaseFamily::Rank1];

    pub fn name(self) -> &'static str {
        match self {
            BaseFamily::Zero => "zero",
            BaseFamily::Unit => "unit",
            BaseFamily::Rank1 => "rank1",
        }
    }
}

impl std::str::FromStr for BaseFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(BaseFamily::Zero),
            "unit" => Ok(BaseFamily::Unit),
            "rank1" => Ok(BaseFamily::Rank1),
            other => Err(Error::invalid(format!("unknown base family {other:?}"))),
        }
    }
}

pub fn base_matrix(family: BaseFamily, n: usize, r: usize, seed: u64) -> Matrix {
    match family {
        BaseFamily::Zero => Matrix::zeros(n, r),
        BaseFamily::Unit => {
            let mut m = Matrix::zeros(n, r);
            for c in 0..r {
                let v = rng::unit_sphere(&mut rng::stream(seed, "base-unit", &[c as u64]), n);
                m.column_mut(c).copy_from_slice(&v);
            }
            m
        }
        BaseFamily::Rank1 => {
            let v = rng::unit_sphere(&mut rng::stream(seed, "base-rank1", &[]), n);
            Matrix::from_fn(n, r, |i, _| v[i])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_rho_is_identity_up_to_rounding() {
        let x = Matrix::from_row_slice(2, 2, &[1.0, -2.0, 0.5, 3.0]);
        let pm = PerturbationModel::new(1e-300, 2).unwrap();
        let y = perturb(&x, &pm, 9).unwrap();
        assert!((y - x).amax() < 1e-250);
    }

    #[test]
    fn same_seed_same_output() {
        let x = Matrix::zeros(5, 3);
        let pm = PerturbationModel::new(0.3, 5).unwrap();
        assert_eq!(perturb(&x, &pm, 4).unwrap(), perturb(&x, &pm, 4).unwrap());
        assert_ne!(perturb(&x, &pm, 4).unwrap(), perturb(&x, &pm, 5).unwrap());
    }

    #[test]
    fn rejects_nonpositive_rho() {
        assert!(PerturbationModel::new(0.0, 3).is_err());
        assert!(PerturbationModel::new(-1.0, 3).is_err());
    }

    #[test]
    fn variance_matches_rho_squared_over_n() {
        // 10⁴ entries; the sample variance times (N−1)/σ² is χ² with N−1
        // degrees of freedom, whose 0.5% and 99.5% quantiles are about
        // N−1 ∓ 2.576·√(2(N−1)).
        let (n, r) = (20, 500);
        let pm = PerturbationModel::new(0.4, n).unwrap();
        let y = perturb(&Matrix::zeros(n, r), &pm, 77).unwrap();
        let k = (n * r) as f64;
        let mean = y.sum() / k;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
        let sigma2 = 0.4f64.powi(2) / n as f64;
        let stat = (k - 1.0) * var / sigma2;
        let half = 2.576 * (2.0 * (k - 1.0)).sqrt();
        assert!((stat - (k - 1.0)).abs() < half, "chi2 statistic {stat}");
    }

    #[test]
    fn base_families() {
        assert_eq!(base_matrix(BaseFamily::Zero, 3, 2, 0), Matrix::zeros(3, 2));
        let u = base_matrix(BaseFamily::Unit, 4, 3, 1);
        for c in u.column_iter() {
            assert!((c.norm() - 1.0).abs() < 1e-14);
        }
        assert_ne!(u.column(0), u.column(1));
        let r = base_matrix(BaseFamily::Rank1, 4, 3, 1);
        assert_eq!(r.column(0), r.column(2));
        assert_eq!("rank1".parse::<BaseFamily>().unwrap(), BaseFamily::Rank1);
    }
}
