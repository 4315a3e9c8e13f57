//! Simultaneous-diagonalization decomposition and its overcomplete driver.
//!
//! `decompose_full_rank` handles `R × R × p` tensors whose first two factor
//! matrices are invertible. `preprocess_to_full_rank` reduces an `n × m × p`
//! tensor to that shape, and `decompose_overcomplete` reaches ranks above the
//! dimension by flattening an order-ℓ tensor into order three first.

use serde::{Deserialize, Serialize};

use crate::assignment::bottleneck_assignment;
use crate::error::{Error, Result};
use crate::linalg::{condition_number, eig_nonsymmetric, eigenvalue_separation, lstsq, singular_values, svd};
use crate::rng;
use crate::tensor::{
    contract_mode, contract_to_matrix, flatten, khatri_rao, khatri_rao_all, mode_product, outer_product, DenseTensor,
    FactorSet, Matrix,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecomposeConfig {
    pub rank: usize,
    pub max_retries: usize,
    /// Largest accepted gap between paired eigenvalues, as a fraction of
    /// the observed separation.
    pub pairing_tolerance: f64,
    pub rng_seed: u64,
    /// Relative floor on `σ_R/σ_1` of the unfoldings during preprocessing.
    pub noise_floor: f64,
    /// Draws whose eigenvalue separation is below this fraction of the
    /// largest eigenvalue magnitude are redrawn.
    pub min_relative_separation: f64,
    /// Relative residual above which splitting a Khatri-Rao column into
    /// per-mode vectors is recorded as a warning.
    pub split_warning: f64,
    pub condition_report: bool,
    /// Number of accepted contraction pairs to compare. The pair with the
    /// best noise sensitivity score `sep·σ_min(T_b)/(1 + max|λ|)` is kept.
    pub contractions: usize,
    /// Alternating least-squares sweeps applied to the result of
    /// `decompose_overcomplete`, against the full input tensor. Zero keeps
    /// the algebraic solution.
    pub refine_sweeps: usize,
}

impl DecomposeConfig {
    pub fn new(rank: usize, seed: u64) -> Self {
        Self {
            rank,
            max_retries: 5,
            pairing_tolerance: 0.25,
            rng_seed: seed,
            noise_floor: 1e-10,
            min_relative_separation: 1e-6,
            split_warning: 1e-4,
            condition_report: true,
            contractions: 1,
            refine_sweeps: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::invalid("rank must be positive"));
        }
        if self.max_retries == 0 {
            return Err(Error::invalid("max_retries must be at least 1"));
        }
        if self.contractions == 0 {
            return Err(Error::invalid("contractions must be at least 1"));
        }
        if !(self.pairing_tolerance > 0.0) {
            return Err(Error::invalid("pairing_tolerance must be positive"));
        }
        if !(self.noise_floor >= 0.0) {
            return Err(Error::invalid("noise_floor must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub kappa_u: f64,
    pub kappa_v: f64,
    /// Smallest sine of the angle between two columns of `W`.
    pub min_column_angle_w: f64,
    pub sep_observed: f64,
    pub retries_used: usize,
}

fn min_pairwise_sine(w: &Matrix) -> f64 {
    let r = w.ncols();
    let mut best = f64::INFINITY;
    for i in 0..r {
        for j in i + 1..r {
            let (a, b) = (w.column(i), w.column(j));
            let denom = a.norm() * b.norm();
            let cos = if denom > 0.0 { (a.dot(&b) / denom).clamp(-1.0, 1.0) } else { 1.0 };
            best = best.min((1.0 - cos * cos).max(0.0).sqrt());
        }
    }
    if best.is_finite() {
        best
    } else {
        1.0
    }
}

/// Output of the reduction to an `R × R × p` core.
#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub core: DenseTensor,
    /// `n × R` orthonormal basis for mode 1.
    pub basis_u: Matrix,
    /// `m × R` orthonormal basis for mode 2.
    pub basis_v: Matrix,
}

fn top_left_singular(t: &DenseTensor, mode: usize, r: usize, floor: f64) -> Result<Matrix> {
    let s = svd(&t.unfold(mode)?)?;
    let s1 = s.sigma_max();
    let sr = s.sigma.get(r - 1).copied().unwrap_or(0.0);
    let ratio = if s1 > 0.0 { sr / s1 } else { 0.0 };
    if !(ratio >= floor) || sr == 0.0 {
        return Err(Error::RankDeficient {
            ratio,
            floor,
            spectrum: s.sigma.clone(),
        });
    }
    Ok(s.u.columns(0, r).into_owned())
}

/// Projects modes 1 and 2 onto their top-`R` left singular subspaces.
pub fn preprocess_to_full_rank(t: &DenseTensor, r: usize, noise_floor: f64) -> Result<Preprocessed> {
    if t.order() != 3 {
        return Err(Error::shape(format!("preprocessing needs an order-3 tensor, got order {}", t.order())));
    }
    let (n, m) = (t.dims()[0], t.dims()[1]);
    if r == 0 || r > n.min(m) {
        return Err(Error::Precondition(format!("rank {r} must be between 1 and min({n}, {m})")));
    }
    let basis_u = top_left_singular(t, 0, r, noise_floor)?;
    let basis_v = top_left_singular(t, 1, r, noise_floor)?;
    let core = mode_product(&mode_product(t, 0, &basis_u.transpose())?, 1, &basis_v.transpose())?;
    Ok(Preprocessed { core, basis_u, basis_v })
}

struct Attempt {
    u: Matrix,
    v: Matrix,
    sep: f64,
    score: f64,
}

enum Rejection {
    Retry { reason: String, sep: f64 },
    Fatal(Error),
}

fn attempt_diagonalize(
    t: &DenseTensor,
    basis_w: &Matrix,
    cfg: &DecomposeConfig,
    attempt: usize,
) -> std::result::Result<Attempt, Rejection> {
    let k = basis_w.ncols();
    let mut g = rng::stream(cfg.rng_seed, "decompose-contraction", &[attempt as u64]);
    let a: Vec<f64> = (basis_w * nalgebra::DVector::from_vec(rng::unit_sphere(&mut g, k))).iter().copied().collect();
    let b: Vec<f64> = (basis_w * nalgebra::DVector::from_vec(rng::unit_sphere(&mut g, k))).iter().copied().collect();
    let ta = contract_to_matrix(t, &a).map_err(Rejection::Fatal)?;
    let tb = contract_to_matrix(t, &b).map_err(Rejection::Fatal)?;

    let retry = |reason: String, sep: f64| Rejection::Retry { reason, sep };
    let lu = tb.clone().lu();
    let tb_scale = tb.amax();
    let min_pivot = (0..tb.nrows()).map(|i| lu.u()[(i, i)].abs()).fold(f64::INFINITY, f64::min);
    if !(min_pivot > 1e-14 * tb_scale * tb.nrows() as f64) {
        return Err(retry("singular contraction T_b".into(), 0.0));
    }
    // M1 = T_a T_b⁻¹ (eigenvectors U), M2 = (T_b⁻¹ T_a)ᵀ (eigenvectors V).
    let x = tb
        .transpose()
        .lu()
        .solve(&ta.transpose())
        .ok_or_else(|| retry("singular contraction T_b".into(), 0.0))?;
    let m1 = x.transpose();
    let y = lu.solve(&ta).ok_or_else(|| retry("singular contraction T_b".into(), 0.0))?;
    let m2 = y.transpose();

    let classify = |e: Error| match e {
        Error::ComplexEigenvalues { re, im } => retry(format!("complex eigenvalue pair {re:e} ± {im:e}i"), 0.0),
        Error::Defective(v) => retry(format!("defective eigenvalues {v:?}"), 0.0),
        Error::NoConvergence { iterations } => retry(format!("no convergence in {iterations} iterations"), 0.0),
        other => Rejection::Fatal(other),
    };
    let e1 = eig_nonsymmetric(&m1).map_err(classify)?;
    let e2 = eig_nonsymmetric(&m2).map_err(classify)?;

    let sep = eigenvalue_separation(&e1.eigenvalues);
    let scale = e1.eigenvalues.iter().fold(0.0f64, |s, x| s.max(x.abs()));
    if e1.eigenvalues.len() > 1 && !(sep > cfg.min_relative_separation * scale) {
        return Err(retry(format!("eigenvalue separation {sep:e} too small relative to {scale:e}"), sep));
    }
    for (i, (l1, l2)) in e1.eigenvalues.iter().zip(&e2.eigenvalues).enumerate() {
        let gap = (l1 - l2).abs();
        if gap > cfg.pairing_tolerance * sep {
            return Err(retry(format!("pairing gap {gap:e} at eigenvalue {i} exceeds tolerance"), sep));
        }
    }
    let score = if cfg.contractions > 1 {
        let smin = singular_values(&tb).map_err(Rejection::Fatal)?.last().copied().unwrap_or(0.0);
        sep * smin / (1.0 + scale)
    } else {
        0.0
    };
    Ok(Attempt { u: e1.eigenvectors, v: e2.eigenvectors, sep, score })
}

/// Decomposes an `R × R × p` tensor with invertible `U`, `V` and no two
/// parallel columns of `W`.
pub fn decompose_full_rank(t: &DenseTensor, cfg: &DecomposeConfig) -> Result<(FactorSet, ConditionReport)> {
    cfg.validate()?;
    if t.order() != 3 {
        return Err(Error::shape(format!("expected an order-3 tensor, got order {}", t.order())));
    }
    let r = cfg.rank;
    if t.dims()[0] != r || t.dims()[1] != r {
        return Err(Error::shape(format!("expected an {r}x{r}xp tensor, got {:?}", t.dims())));
    }
    // Contractions only see Wᵀa, so they are drawn from the leading mode-3
    // subspace, which holds the range of W and keeps noise directions out.
    let k = r.min(t.dims()[2]);
    let basis_w = svd(&t.unfold(2)?)?.u.columns(0, k).into_owned();
    let mut last_reason = String::new();
    let mut last_sep = 0.0;
    let mut failures = 0;
    let mut accepted = 0;
    let mut best: Option<Attempt> = None;
    let mut attempt = 0;
    while failures < cfg.max_retries && accepted < cfg.contractions {
        match attempt_diagonalize(t, &basis_w, cfg, attempt) {
            Ok(found) => {
                accepted += 1;
                if best.as_ref().is_none_or(|b| found.score > b.score) {
                    best = Some(found);
                }
            }
            Err(Rejection::Fatal(e)) => return Err(e),
            Err(Rejection::Retry { reason, sep }) => {
                failures += 1;
                last_reason = reason;
                last_sep = sep;
            }
        }
        attempt += 1;
    }
    let Some(found) = best else {
        return Err(Error::RetriesExhausted {
            attempts: cfg.max_retries,
            sep_observed: last_sep,
            reason: last_reason,
        });
    };
    let kr = khatri_rao(&found.u, &found.v)?;
    let unf = flatten(t, &[vec![0, 1], vec![2]])?.to_matrix()?;
    let w = lstsq(&kr, &unf)?.transpose();
    let report = if cfg.condition_report {
        ConditionReport {
            kappa_u: condition_number(&found.u)?,
            kappa_v: condition_number(&found.v)?,
            min_column_angle_w: min_pairwise_sine(&w),
            sep_observed: found.sep,
            retries_used: failures,
        }
    } else {
        ConditionReport { sep_observed: found.sep, retries_used: failures, ..Default::default() }
    };
    let fs = FactorSet::from_factors(vec![found.u, found.v, w])?.canonicalize();
    Ok((fs, report))
}

/// Preprocesses an `n × m × p` tensor and decomposes its core, mapping the
/// factors back to the original coordinates.
pub fn decompose_order3(t: &DenseTensor, cfg: &DecomposeConfig) -> Result<(FactorSet, ConditionReport)> {
    cfg.validate()?;
    let pre = preprocess_to_full_rank(t, cfg.rank, cfg.noise_floor)?;
    let (core, report) = decompose_full_rank(&pre.core, cfg)?;
    let f = core.factors();
    let u = &pre.basis_u * &f[0];
    let v = &pre.basis_v * &f[1];
    let fs = FactorSet::new(vec![u, v, f[2].clone()], core.weights().to_vec())?.canonicalize();
    Ok((fs, report))
}

/// Mode groups used to flatten an order-ℓ tensor: the first ⌊(ℓ−1)/2⌋
/// modes, the next ⌊(ℓ−1)/2⌋, and the remainder.
pub fn tripartition(ell: usize) -> Vec<Vec<usize>> {
    let g = (ell - 1) / 2;
    vec![(0..g).collect(), (g..2 * g).collect(), (2 * g..ell).collect()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitWarning {
    pub term: usize,
    pub group: usize,
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct OvercompleteResult {
    pub factors: FactorSet,
    pub report: ConditionReport,
    /// Relative residual of the rank-one split, per term and mode group.
    pub split_residuals: Vec<Vec<f64>>,
    pub warnings: Vec<SplitWarning>,
}

/// Best rank-one approximation `s·⊗_j u_j` of a small dense tensor, with
/// unit `u_j`. Two modes use the SVD; more use higher-order power iteration
/// started from the leading left singular vectors of each unfolding.
pub fn rank_one_approximation(t: &DenseTensor) -> Result<(f64, Vec<Vec<f64>>)> {
    let l = t.order();
    if l == 1 {
        let norm = t.frobenius_norm();
        let u = if norm > 0.0 { t.data().iter().map(|x| x / norm).collect() } else { t.data().to_vec() };
        return Ok((norm, vec![u]));
    }
    if l == 2 {
        let s = svd(&t.to_matrix()?)?;
        let u = s.u.column(0).iter().copied().collect();
        let v = s.v.column(0).iter().copied().collect();
        return Ok((s.sigma_max(), vec![u, v]));
    }
    let mut us: Vec<Vec<f64>> = (0..l)
        .map(|j| {
            let s = svd(&t.unfold(j)?)?;
            Ok(s.u.column(0).iter().copied().collect())
        })
        .collect::<Result<_>>()?;
    let mut value = 0.0;
    for _ in 0..50 {
        let mut change: f64 = 0.0;
        for j in 0..l {
            // Contract every mode except j, highest index first so the
            // remaining axis numbering stays valid.
            let mut cur = t.clone();
            for k in (0..l).rev() {
                if k != j {
                    cur = contract_mode(&cur, k, &us[k])?;
                }
            }
            let v = cur.into_data();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Ok((0.0, us));
            }
            let next: Vec<f64> = v.iter().map(|x| x / norm).collect();
            change = change.max(next.iter().zip(&us[j]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
            us[j] = next;
            value = norm;
        }
        if change < 1e-15 {
            break;
        }
    }
    Ok((value, us))
}

/// Decomposes an order-ℓ tensor (ℓ ≥ 3) through its three-group flattening.
pub fn decompose_overcomplete(t: &DenseTensor, cfg: &DecomposeConfig) -> Result<OvercompleteResult> {
    cfg.validate()?;
    let ell = t.order();
    if ell < 3 {
        return Err(Error::Precondition(format!("order {ell} is below 3")));
    }
    let groups = tripartition(ell);
    let flat = flatten(t, &groups)?;
    let (n, m) = (flat.dims()[0], flat.dims()[1]);
    if cfg.rank > n.min(m) {
        return Err(Error::Precondition(format!(
            "rank {} exceeds the flattened dimensions {n} x {m}",
            cfg.rank
        )));
    }
    let (fs3, report) = decompose_order3(&flat, cfg)?;
    let dims = t.dims();
    let r = cfg.rank;
    let mut factors: Vec<Matrix> = dims.iter().map(|&d| Matrix::zeros(d, r)).collect();
    let mut weights = fs3.weights().to_vec();
    let mut split_residuals = vec![vec![0.0; groups.len()]; r];
    let mut warnings = Vec::new();
    for term in 0..r {
        for (gi, group) in groups.iter().enumerate() {
            let col: Vec<f64> = fs3.factor(gi).column(term).iter().copied().collect();
            let gdims: Vec<usize> = group.iter().map(|&j| dims[j]).collect();
            let block = DenseTensor::new(gdims, col.clone())?;
            let (scale, parts) = rank_one_approximation(&block)?;
            let approx = outer_product(&parts)?.scaled(scale);
            let cnorm = block.frobenius_norm();
            let residual = if cnorm > 0.0 { block.sub(&approx)?.frobenius_norm() / cnorm } else { 0.0 };
            split_residuals[term][gi] = residual;
            if residual > cfg.split_warning {
                warnings.push(SplitWarning { term, group: gi, residual });
            }
            weights[term] *= scale;
            for (&mode, part) in group.iter().zip(&parts) {
                factors[mode].column_mut(term).copy_from_slice(part);
            }
        }
    }
    let mut factors = FactorSet::new(factors, weights)?.canonicalize();
    if cfg.refine_sweeps > 0 {
        factors = als_refine(t, &factors, cfg.refine_sweeps)?;
    }
    Ok(OvercompleteResult { factors, report, split_residuals, warnings })
}

/// Alternating least squares from a starting decomposition: each sweep
/// re-solves every factor matrix with the others fixed.
pub fn als_refine(t: &DenseTensor, start: &FactorSet, sweeps: usize) -> Result<FactorSet> {
    if start.dims() != t.dims() {
        return Err(Error::shape(format!("factors of shape {:?} for a tensor of shape {:?}", start.dims(), t.dims())));
    }
    let mut factors = start.absorb_weights(t.order() - 1).factors().to_vec();
    let unfoldings: Vec<Matrix> = (0..t.order()).map(|m| t.unfold(m)).collect::<Result<_>>()?;
    for _ in 0..sweeps {
        for m in 0..t.order() {
            let others: Vec<&Matrix> = factors.iter().enumerate().filter(|&(j, _)| j != m).map(|(_, f)| f).collect();
            let k = khatri_rao_all(&others)?;
            factors[m] = lstsq(&k, &unfoldings[m].transpose())?.transpose();
        }
    }
    if factors.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("refined factors"));
    }
    Ok(FactorSet::from_factors(factors)?.canonicalize())
}

/// Largest Frobenius distance between matched weighted rank-one terms,
/// minimized over term matchings.
pub fn recovery_error(found: &FactorSet, truth: &FactorSet) -> Result<f64> {
    if found.rank() != truth.rank() {
        return Err(Error::shape(format!("rank {} against rank {}", found.rank(), truth.rank())));
    }
    if found.dims() != truth.dims() {
        return Err(Error::shape(format!("dims {:?} against {:?}", found.dims(), truth.dims())));
    }
    let r = found.rank();
    if r == 0 {
        return Ok(0.0);
    }
    let size: usize = found.dims().iter().product();
    let cost = if size <= 1_000_000 {
        let a: Vec<DenseTensor> = (0..r).map(|i| found.term(i)).collect::<Result<_>>()?;
        let b: Vec<DenseTensor> = (0..r).map(|i| truth.term(i)).collect::<Result<_>>()?;
        Matrix::from_fn(r, r, |i, j| {
            a[i].data().iter().zip(b[j].data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
        })
    } else {
        // ‖a−b‖² = ‖a‖² + ‖b‖² − 2⟨a,b⟩ with inner products of rank-one terms
        // factorized per mode.
        let inner = |x: &FactorSet, i: usize, y: &FactorSet, j: usize| -> f64 {
            let mut p = x.weights()[i] * y.weights()[j];
            for m in 0..x.order() {
                p *= x.factor(m).column(i).dot(&y.factor(m).column(j));
            }
            p
        };
        Matrix::from_fn(r, r, |i, j| {
            let d2 = inner(found, i, found, i) + inner(truth, j, truth, j) - 2.0 * inner(found, i, truth, j);
            d2.max(0.0).sqrt()
        })
    };
    Ok(bottleneck_assignment(&cost)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planted::{planted_full_rank, planted_perturbed};
    use crate::tensor::reconstruct;

    fn diagonal_tensor() -> DenseTensor {
        let id = Matrix::identity(3, 3);
        let fs = FactorSet::new(vec![id.clone(), id.clone(), id], vec![1.0, 2.0, 3.0]).unwrap();
        reconstruct(&fs).unwrap()
    }

    #[test]
    fn diagonal_tensor_any_seed() {
        let t = diagonal_tensor();
        for seed in 0..10 {
            let (fs, rep) = decompose_full_rank(&t, &DecomposeConfig::new(3, seed)).unwrap();
            let mut w = fs.weights().to_vec();
            w.sort_by(f64::total_cmp);
            for (got, want) in w.iter().zip([1.0, 2.0, 3.0]) {
                assert!((got - want).abs() < 1e-12, "seed {seed}: {w:?}");
            }
            assert!(rep.sep_observed > 0.0);
            assert!((rep.kappa_u - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn planted_rank_five() {
        let truth = planted_full_rank(5, 5, 10.0, 42).unwrap();
        let t = reconstruct(&truth).unwrap();
        let (fs, _) = decompose_full_rank(&t, &DecomposeConfig::new(5, 1)).unwrap();
        assert!(recovery_error(&fs, &truth).unwrap() < 1e-7);
    }

    #[test]
    fn planted_rank_five_with_noise() {
        let truth = planted_full_rank(5, 5, 10.0, 43).unwrap();
        let mut t = reconstruct(&truth).unwrap();
        let mut g = rng::stream(5, "noise", &[]);
        for x in t.data_mut() {
            *x += 1e-8 * (2.0 * rand::Rng::random::<f64>(&mut g) - 1.0);
        }
        let (fs, _) = decompose_full_rank(&t, &DecomposeConfig::new(5, 1)).unwrap();
        assert!(recovery_error(&fs, &truth).unwrap() < 1e-5);
    }

    #[test]
    fn seed_determinism_is_bitwise() {
        let truth = planted_full_rank(6, 4, 10.0, 7).unwrap();
        let t = reconstruct(&truth).unwrap();
        let a = decompose_full_rank(&t, &DecomposeConfig::new(6, 99)).unwrap().0;
        let b = decompose_full_rank(&t, &DecomposeConfig::new(6, 99)).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn parallel_w_columns_exhaust_retries() {
        let id = Matrix::identity(2, 2);
        let w = Matrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.0]);
        let t = reconstruct(&FactorSet::from_factors(vec![id.clone(), id, w]).unwrap()).unwrap();
        match decompose_full_rank(&t, &DecomposeConfig::new(2, 0)) {
            Err(Error::RetriesExhausted { attempts, .. }) => assert_eq!(attempts, 5),
            other => panic!("expected retry exhaustion, got {other:?}"),
        }
    }

    #[test]
    fn preprocess_round_trip() {
        let truth = FactorSet::from_factors(vec![
            crate::planted::gaussian_matrix(&mut rng::stream(1, "pp", &[0]), 8, 3),
            crate::planted::gaussian_matrix(&mut rng::stream(1, "pp", &[1]), 8, 3),
            crate::planted::gaussian_matrix(&mut rng::stream(1, "pp", &[2]), 4, 3),
        ])
        .unwrap();
        let t = reconstruct(&truth).unwrap();
        let pre = preprocess_to_full_rank(&t, 3, 1e-10).unwrap();
        assert_eq!(pre.core.dims(), &[3, 3, 4]);
        let back = mode_product(&mode_product(&pre.core, 0, &pre.basis_u).unwrap(), 1, &pre.basis_v).unwrap();
        assert!(back.sub(&t).unwrap().frobenius_norm() < 1e-12 * t.frobenius_norm());
        let (fs, _) = decompose_order3(&t, &DecomposeConfig::new(3, 2)).unwrap();
        assert!(recovery_error(&fs, &truth.canonicalize()).unwrap() < 1e-8);
    }

    #[test]
    fn preprocess_reports_rank_deficiency() {
        let t = diagonal_tensor();
        match preprocess_to_full_rank(&t.scaled(0.0), 2, 1e-10) {
            Err(Error::RankDeficient { spectrum, .. }) => assert_eq!(spectrum.len(), 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn overcomplete_order_five() {
        let truth = planted_perturbed(5, 3, 4, 0.1, 11).unwrap();
        let t = reconstruct(&truth).unwrap();
        let res = decompose_overcomplete(&t, &DecomposeConfig::new(4, 3)).unwrap();
        assert!(res.warnings.is_empty());
        assert!(recovery_error(&res.factors, &truth).unwrap() < 1e-6);
    }

    #[test]
    fn overcomplete_order_three_matches_direct_path() {
        let truth = planted_full_rank(4, 4, 10.0, 5).unwrap();
        let t = reconstruct(&truth).unwrap();
        let cfg = DecomposeConfig::new(4, 8);
        let a = decompose_overcomplete(&t, &cfg).unwrap().factors;
        let b = decompose_order3(&t, &cfg).unwrap().0;
        assert!(recovery_error(&a, &b).unwrap() < 1e-12);
    }

    #[test]
    fn refinement_keeps_exact_solutions_and_reduces_noise() {
        let truth = planted_full_rank(5, 6, 10.0, 21).unwrap();
        let t = reconstruct(&truth).unwrap();
        let cfg = DecomposeConfig::new(5, 5);
        let refined = DecomposeConfig { refine_sweeps: 10, ..cfg.clone() };
        let exact = decompose_overcomplete(&t, &refined).unwrap();
        assert!(recovery_error(&exact.factors, &truth).unwrap() < 1e-9);

        let mut noisy = t.clone();
        let mut g = rng::stream(22, "noise", &[]);
        for x in noisy.data_mut() {
            *x += 1e-3 * (2.0 * rand::Rng::random::<f64>(&mut g) - 1.0);
        }
        let plain = decompose_overcomplete(&noisy, &cfg).unwrap();
        let polished = decompose_overcomplete(&noisy, &refined).unwrap();
        let residual = |fs: &FactorSet| noisy.sub(&reconstruct(fs).unwrap()).unwrap().frobenius_norm();
        assert!(residual(&polished.factors) <= residual(&plain.factors) + 1e-12);
    }

    #[test]
    fn comparing_contractions_never_hurts_exact_input() {
        let truth = planted_full_rank(5, 6, 10.0, 23).unwrap();
        let t = reconstruct(&truth).unwrap();
        let cfg = DecomposeConfig { contractions: 6, ..DecomposeConfig::new(5, 1) };
        let found = decompose_overcomplete(&t, &cfg).unwrap();
        assert!(recovery_error(&found.factors, &truth).unwrap() < 1e-8);
    }

    #[test]
    fn tripartitions() {
        assert_eq!(tripartition(3), vec![vec![0], vec![1], vec![2]]);
        assert_eq!(tripartition(4), vec![vec![0], vec![1], vec![2, 3]]);
        assert_eq!(tripartition(5), vec![vec![0, 1], vec![2, 3], vec![4]]);
        assert_eq!(tripartition(6), vec![vec![0, 1], vec![2, 3], vec![4, 5]]);
    }

    #[test]
    fn rank_one_approximation_is_exact_on_rank_one() {
        let parts = vec![vec![1.0, -2.0], vec![0.5, 0.5, 1.0], vec![3.0, 0.0, -1.0, 1.0]];
        let t = outer_product(&parts).unwrap();
        let (s, us) = rank_one_approximation(&t).unwrap();
        let approx = outer_product(&us).unwrap().scaled(s);
        assert!(approx.sub(&t).unwrap().frobenius_norm() < 1e-12 * t.frobenius_norm());
    }

    #[test]
    fn recovery_error_examples() {
        let truth = planted_full_rank(3, 3, 10.0, 1).unwrap();
        assert_eq!(recovery_error(&truth, &truth).unwrap(), 0.0);
        let perm: Vec<Matrix> = truth.factors().iter().map(|f| f.select_columns(&[2, 0, 1])).collect();
        let w = truth.weights();
        let permuted = FactorSet::new(perm, vec![w[2], w[0], w[1]]).unwrap();
        assert_eq!(recovery_error(&permuted, &truth).unwrap(), 0.0);

        let e = Matrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let a = FactorSet::new(vec![e.clone(), e.clone()], vec![1.0]).unwrap();
        let b = FactorSet::new(vec![e.clone(), e], vec![1.001]).unwrap();
        assert!((recovery_error(&a, &b).unwrap() - 1e-3).abs() < 1e-15);

        let c = FactorSet::new(vec![Matrix::zeros(2, 2), Matrix::zeros(2, 2)], vec![1.0, 1.0]).unwrap();
        assert!(recovery_error(&a, &c).is_err());
    }
}
