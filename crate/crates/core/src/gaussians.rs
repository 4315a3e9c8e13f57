//! Mixtures of axis-aligned Gaussians learned from moments of disjoint
//! coordinate groups.
//!
//! Products of coordinates from different groups only see the means, so the
//! partitioned moment is a low-rank tensor in the mean blocks. Decomposing it
//! recovers every block up to scale; a second partition that swaps half of
//! two groups ties the block scales together, and one more moment of order
//! `ℓ + 1` separates the weight from the mean length.

use std::io::{BufRead, Write};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment::min_cost_assignment;
use crate::decompose::{decompose_overcomplete, DecomposeConfig};
use crate::error::{Error, Result};
use crate::io::format_f64;
use crate::linalg::{lstsq, svd};
use crate::planted::gaussian_matrix;
use crate::rng;
use crate::smoothed::{perturb, PerturbationModel};
use crate::tensor::{kron_vec, DenseTensor, FactorSet, Matrix};

const SHARD: usize = 1 << 13;

#[derive(Debug, Clone, PartialEq)]
pub struct AxisAlignedGmm {
    weights: Vec<f64>,
    /// `n × k`, one column per component.
    means: Matrix,
    /// `n × k` diagonal variances `σ_ij²`.
    variances: Matrix,
}

/// JSON layout: `means[component][coord]`, likewise `variances`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GmmFile {
    pub n: usize,
    pub k: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
}

fn columns_to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.column_iter().map(|c| c.iter().copied().collect()).collect()
}

impl AxisAlignedGmm {
    pub fn new(weights: Vec<f64>, means: Matrix, variances: Matrix) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.nrows() == 0 || means.ncols() != k || variances.shape() != means.shape() {
            return Err(Error::shape(format!(
                "{k} weights with means {:?} and variances {:?}",
                means.shape(),
                variances.shape()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("weights must be non-negative and sum to 1"));
        }
        if means.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("means"));
        }
        if variances.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::invalid("variances must be positive"));
        }
        Ok(Self { weights, means, variances })
    }

    /// Rejects models whose mean lengths exceed `cap`.
    pub fn check_mean_cap(&self, cap: f64) -> Result<()> {
        match self.means.column_iter().map(|c| c.norm()).find(|&l| l > cap) {
            Some(l) => Err(Error::Precondition(format!("mean length {l} exceeds the cap {cap}"))),
            None => Ok(()),
        }
    }

    pub fn n(&self) -> usize {
        self.means.nrows()
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &Matrix {
        &self.means
    }

    pub fn variances(&self) -> &Matrix {
        &self.variances
    }

    pub fn to_file(&self) -> GmmFile {
        GmmFile {
            n: self.n(),
            k: self.k(),
            weights: self.weights.clone(),
            means: columns_to_rows(&self.means),
            variances: columns_to_rows(&self.variances),
        }
    }

    pub fn from_file(f: &GmmFile) -> Result<Self> {
        let to_matrix = |rows: &[Vec<f64>], what: &str| -> Result<Matrix> {
            if rows.len() != f.k || rows.iter().any(|r| r.len() != f.n) {
                return Err(Error::shape(format!("{what} must hold {} vectors of length {}", f.k, f.n)));
            }
            Ok(Matrix::from_fn(f.n, f.k, |a, i| rows[i][a]))
        };
        Self::new(f.weights.clone(), to_matrix(&f.means, "means")?, to_matrix(&f.variances, "variances")?)
    }
}

/// Planted smoothed model: base means `scale·u_i` with random unit `u_i`,
/// ρ-perturbed; variances uniform in `var_range`; weights proportional to
/// `1 + U(0, 1)`.
pub fn planted_gmm(
    n: usize,
    k: usize,
    rho: f64,
    scale: f64,
    var_range: (f64, f64),
    seed: u64,
) -> Result<AxisAlignedGmm> {
    if !(var_range.0 > 0.0 && var_range.1 >= var_range.0) {
        return Err(Error::invalid(format!("bad variance range {var_range:?}")));
    }
    let mut base = gaussian_matrix(&mut rng::stream(seed, "gmm-base", &[]), n, k);
    for mut c in base.column_iter_mut() {
        let l = c.norm();
        c *= scale / l;
    }
    let means = perturb(&base, &PerturbationModel::new(rho, n)?, rng::derive_seed(seed, "gmm-perturb", &[]))?;
    let mut g = rng::stream(seed, "gmm-variances", &[]);
    let variances = Matrix::from_fn(n, k, |_, _| var_range.0 + (var_range.1 - var_range.0) * g.random::<f64>());
    let mut g = rng::stream(seed, "gmm-weights", &[]);
    let raw: Vec<f64> = (0..k).map(|_| 1.0 + g.random::<f64>()).collect();
    let s: f64 = raw.iter().sum();
    AxisAlignedGmm::new(raw.iter().map(|w| w / s).collect(), means, variances)
}

/// `N × n` samples, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmSamples {
    n: usize,
    data: Vec<f64>,
}

impl GmmSamples {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || !data.len().is_multiple_of(n) {
            return Err(Error::shape(format!("{} values do not form rows of length {n}", data.len())));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("samples"));
        }
        Ok(Self { n, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.n
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.n..(t + 1) * self.n]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn truncated(&self, len: usize) -> GmmSamples {
        let len = len.min(self.len());
        GmmSamples { n: self.n, data: self.data[..len * self.n].to_vec() }
    }
}

/// Draws `count` samples in fixed-size shards with their own streams.
pub fn sample(model: &AxisAlignedGmm, count: usize, seed: u64) -> Result<GmmSamples> {
    let comp = WeightedIndex::new(&model.weights).map_err(|e| Error::invalid(e.to_string()))?;
    let n = model.n();
    let sd = model.variances.map(f64::sqrt);
    let shards = count.div_ceil(SHARD);
    let parts: Vec<Vec<f64>> = (0..shards)
        .into_par_iter()
        .map(|s| {
            let mut g = rng::stream(seed, "gmm-sample", &[s as u64]);
            let len = SHARD.min(count - s * SHARD);
            let mut out = Vec::with_capacity(len * n);
            for _ in 0..len {
                let i = comp.sample(&mut g);
                for a in 0..n {
                    let z: f64 = g.sample(StandardNormal);
                    out.push(model.means[(a, i)] + sd[(a, i)] * z);
                }
            }
            out
        })
        .collect();
    GmmSamples::new(n, parts.concat())
}

/// Disjoint coordinate groups `S_1, …, S_ℓ` of near-equal size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionScheme {
    pub groups: Vec<Vec<usize>>,
}

fn halves(g: &[usize]) -> (&[usize], &[usize]) {
    g.split_at(g.len().div_ceil(2))
}

impl PartitionScheme {
    /// Contiguous groups over `0..n`.
    pub fn new(n: usize, ell: usize) -> Result<Self> {
        Self::over(&(0..n).collect::<Vec<_>>(), ell)
    }

    /// Contiguous groups over the given coordinates, sizes differing by at
    /// most one.
    pub fn over(indices: &[usize], ell: usize) -> Result<Self> {
        if ell == 0 || indices.len() < ell {
            return Err(Error::Precondition(format!(
                "cannot split {} coordinates into {ell} non-empty groups",
                indices.len()
            )));
        }
        let (q, rem) = (indices.len() / ell, indices.len() % ell);
        let mut groups = Vec::with_capacity(ell);
        let mut start = 0;
        for t in 0..ell {
            let len = q + usize::from(t < rem);
            groups.push(indices[start..start + len].to_vec());
            start += len;
        }
        Ok(Self { groups })
    }

    pub fn ell(&self) -> usize {
        self.groups.len()
    }

    /// Swaps halves between groups 0 and `t`: with `S_0 = A_0 ∪ B_0` and
    /// `S_t = A_t ∪ B_t`, group 0 becomes `A_0 ∪ A_t` and group `t` becomes
    /// `B_0 ∪ B_t`. Other groups are unchanged.
    pub fn alt_groups(&self, t: usize) -> Result<Vec<Vec<usize>>> {
        if t == 0 || t >= self.ell() {
            return Err(Error::invalid(format!("alt partition index {t} out of range")));
        }
        if self.groups[0].len() < 2 || self.groups[t].len() < 2 {
            return Err(Error::Precondition("groups need at least two coordinates to be halved".into()));
        }
        let (a0, b0) = halves(&self.groups[0]);
        let (at, bt) = halves(&self.groups[t]);
        let mut out = self.groups.clone();
        out[0] = [a0, at].concat();
        out[t] = [b0, bt].concat();
        Ok(out)
    }

    /// The alt partition pairing the first two groups.
    pub fn alt(&self) -> Result<Vec<Vec<usize>>> {
        self.alt_groups(1)
    }

    /// `ℓ + 1` groups: the last group is split in halves.
    pub fn refined(&self) -> Result<Vec<Vec<usize>>> {
        let last = self.groups.last().expect("at least one group");
        if last.len() < 2 {
            return Err(Error::Precondition("the last group needs at least two coordinates".into()));
        }
        let (a, b) = halves(last);
        let mut out = self.groups[..self.ell() - 1].to_vec();
        out.push(a.to_vec());
        out.push(b.to_vec());
        Ok(out)
    }
}

fn check_groups(groups: &[Vec<usize>], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    for g in groups {
        if g.is_empty() {
            return Err(Error::invalid("empty coordinate group"));
        }
        for &j in g {
            if j >= n {
                return Err(Error::invalid(format!("coordinate {j} out of range for n = {n}")));
            }
            if std::mem::replace(&mut seen[j], true) {
                return Err(Error::invalid(format!("coordinate {j} appears twice")));
            }
        }
    }
    Ok(())
}

fn restrict(x: &[f64], g: &[usize]) -> Vec<f64> {
    g.iter().map(|&j| x[j]).collect()
}

fn block_product(x: &[f64], groups: &[Vec<usize>]) -> Vec<f64> {
    groups.iter().fold(vec![1.0], |acc, g| kron_vec(&acc, &restrict(x, g)))
}

/// `block_product` into reusable buffers; the result is left in `out`.
fn block_product_into(x: &[f64], groups: &[Vec<usize>], out: &mut Vec<f64>, tmp: &mut Vec<f64>) {
    out.clear();
    out.push(1.0);
    for g in groups {
        tmp.clear();
        for &a in out.iter() {
            tmp.extend(g.iter().map(|&j| a * x[j]));
        }
        std::mem::swap(out, tmp);
    }
}

/// Where moments come from: closed forms of a known model, or sample
/// averages.
#[derive(Debug, Clone, Copy)]
pub enum MomentSource<'a> {
    Exact(&'a AxisAlignedGmm),
    Empirical(&'a GmmSamples),
}

impl MomentSource<'_> {
    pub fn n(&self) -> usize {
        match self {
            MomentSource::Exact(m) => m.n(),
            MomentSource::Empirical(s) => s.n(),
        }
    }

    /// `E[⊗_t x_{|S_t}]`.
    pub fn partitioned_moment(&self, groups: &[Vec<usize>]) -> Result<DenseTensor> {
        Ok(self.moments_with(groups, None, &[0])?.remove(0))
    }

    /// `E[x_j² ⊗_t x_{|S_t}]` for groups avoiding `j`.
    pub fn variance_moment(&self, j: usize, groups: &[Vec<usize>]) -> Result<DenseTensor> {
        self.coordinate_moment(j, 2, groups)
    }

    /// `E[x_j^power ⊗_t x_{|S_t}]` for `power ≤ 2` and groups avoiding `j`.
    pub fn coordinate_moment(&self, j: usize, power: u32, groups: &[Vec<usize>]) -> Result<DenseTensor> {
        Ok(self.coordinate_moments(j, &[power], groups)?.remove(0))
    }

    /// `coordinate_moment` for several powers in one pass over the data.
    pub fn coordinate_moments(&self, j: usize, powers: &[u32], groups: &[Vec<usize>]) -> Result<Vec<DenseTensor>> {
        if j >= self.n() {
            return Err(Error::invalid(format!("coordinate {j} out of range")));
        }
        if groups.iter().flatten().any(|&c| c == j) {
            return Err(Error::invalid(format!("groups must exclude coordinate {j}")));
        }
        if let Some(p) = powers.iter().find(|&&p| p > 2) {
            return Err(Error::invalid(format!("coordinate power {p} is above 2")));
        }
        self.moments_with(groups, Some(j), powers)
    }

    fn moments_with(&self, groups: &[Vec<usize>], coord: Option<usize>, powers: &[u32]) -> Result<Vec<DenseTensor>> {
        let n = self.n();
        check_groups(groups, n)?;
        let dims: Vec<usize> = groups.iter().map(Vec::len).collect();
        let len: usize = dims.iter().product();
        let np = powers.len();
        // acc[p·len + e] accumulates power p.
        let acc = match self {
            MomentSource::Exact(m) => {
                let mut acc = vec![0.0; np * len];
                for i in 0..m.k() {
                    let mu: Vec<f64> = m.means.column(i).iter().copied().collect();
                    let prod = block_product(&mu, groups);
                    for (p, &pw) in powers.iter().enumerate() {
                        let c = m.weights[i]
                            * match (coord, pw) {
                                (None, _) | (_, 0) => 1.0,
                                (Some(j), 1) => mu[j],
                                (Some(j), _) => mu[j] * mu[j] + m.variances[(j, i)],
                            };
                        for (a, v) in acc[p * len..(p + 1) * len].iter_mut().zip(&prod) {
                            *a += c * v;
                        }
                    }
                }
                acc
            }
            MomentSource::Empirical(s) => {
                if s.is_empty() {
                    return Err(Error::invalid("no samples"));
                }
                let partial: Vec<Vec<f64>> = s
                    .data
                    .par_chunks(SHARD * n)
                    .map(|chunk| {
                        let mut acc = vec![0.0; np * len];
                        let (mut prod, mut tmp) = (Vec::with_capacity(len), Vec::with_capacity(len));
                        for x in chunk.chunks(n) {
                            block_product_into(x, groups, &mut prod, &mut tmp);
                            for (p, &pw) in powers.iter().enumerate() {
                                let c = coord.map_or(1.0, |j| x[j].powi(pw as i32));
                                for (a, v) in acc[p * len..(p + 1) * len].iter_mut().zip(&prod) {
                                    *a += c * v;
                                }
                            }
                        }
                        acc
                    })
                    .collect();
                let inv = 1.0 / s.len() as f64;
                let mut acc = vec![0.0; np * len];
                for p in partial {
                    acc.iter_mut().zip(p).for_each(|(a, v)| *a += v);
                }
                acc.iter_mut().for_each(|a| *a *= inv);
                acc
            }
        };
        acc.chunks(len).map(|c| DenseTensor::new(dims.clone(), c.to_vec())).collect()
    }
}

/// Weight from `u ≈ w^{1/(L−1)}μ` and `v ≈ w^{1/L}μ`:
/// `(‖u‖² / |⟨u, v⟩|)^{L(L−1)}`.
pub fn weight_from_scaled_vectors(u: &[f64], v: &[f64], ell: usize) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::shape(format!("vectors of length {} and {}", u.len(), v.len())));
    }
    if ell < 2 {
        return Err(Error::invalid("the order must be at least 2"));
    }
    let uu: f64 = u.iter().map(|x| x * x).sum();
    if uu == 0.0 {
        return Err(Error::invalid("u is zero"));
    }
    let uv: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>().abs();
    if uv == 0.0 {
        return Err(Error::invalid("u and v are orthogonal"));
    }
    Ok((uu / uv).powi((ell * (ell - 1)) as i32))
}

/// How variances are read off the per-coordinate linear systems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarianceEstimator {
    /// `σ_ij² = z_i/ŵ_i − μ̂_ij²` with the learned weights and means.
    Direct,
    /// Solves the same system against `E[⊗x]`, `E[x_j ⊗x]` and `E[x_j² ⊗x]`
    /// for `u_i ≈ w_i`, `y_i ≈ w_i μ_ij` and `z_i`, and returns
    /// `z_i/u_i − (y_i/u_i)²`. Scale errors in the learned mean blocks
    /// cancel out.
    Calibrated,
}

/// Which half supplies the scale ratio between two groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScaleRoute {
    /// The swapped group `A_0 ∪ A_t`.
    A,
    /// The swapped group `B_0 ∪ B_t`.
    B,
    /// Both estimates, averaged with weights.
    Pooled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmConfig {
    pub seed: u64,
    pub max_retries: usize,
    /// Contraction pairs compared per decomposition.
    pub contractions: usize,
    /// Least-squares refinement sweeps per decomposition.
    pub refine_sweeps: usize,
    /// A matched component must beat the runner-up by this factor in
    /// matching cost.
    pub matching_margin: f64,
    /// Blocks of a unit factor column shorter than this are degenerate.
    pub block_floor: f64,
    pub scale_route: ScaleRoute,
    pub var_floor: f64,
    /// Number of coordinate groups in the variance systems; `None` uses ℓ.
    /// Fewer groups give lower-order, less noisy moments and suffice while
    /// the products of group sizes comfortably exceed `k`.
    pub variance_groups: Option<usize>,
    pub variance_estimator: VarianceEstimator,
    /// Smallest accepted `σ_min/σ_max` of the variance system.
    pub min_condition: f64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            max_retries: 5,
            contractions: 8,
            refine_sweeps: 20,
            matching_margin: 2.0,
            block_floor: 1e-8,
            scale_route: ScaleRoute::Pooled,
            var_floor: 1e-9,
            variance_groups: None,
            variance_estimator: VarianceEstimator::Calibrated,
            min_condition: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MeansDiagnostics {
    /// Smallest runner-up to best cost ratio over every cross-run matching.
    pub min_matching_margin: f64,
    pub sep_observed: f64,
    pub retries_used: usize,
    pub split_warnings: usize,
    /// Sum of the raw weights before renormalization.
    pub raw_weight_sum: f64,
    /// `k·ℓ^⌊(ℓ−1)/2⌋`-style regime check: the bound `n^⌊(ℓ−1)/2⌋/(2ℓ)`.
    pub theoretical_max_components: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeansWeights {
    pub weights: Vec<f64>,
    /// `n × k`.
    pub means: Matrix,
    /// `C_ℓ = w_i‖μ_i‖^ℓ` per component.
    pub c_ell: Vec<f64>,
    /// `C_{ℓ+1} = w_i‖μ_i‖^{ℓ+1}` per component.
    pub c_ell1: Vec<f64>,
    pub diagnostics: MeansDiagnostics,
}

fn run_decompose(
    source: &MomentSource,
    groups: &[Vec<usize>],
    k: usize,
    cfg: &GmmConfig,
    label: u64,
    diag: &mut MeansDiagnostics,
) -> Result<FactorSet> {
    let t = source.partitioned_moment(groups)?;
    let mut dc = DecomposeConfig::new(k, rng::derive_seed(cfg.seed, "gmm-decompose", &[label]));
    dc.max_retries = cfg.max_retries;
    dc.contractions = cfg.contractions;
    dc.refine_sweeps = cfg.refine_sweeps;
    let res = decompose_overcomplete(&t, &dc)?;
    diag.sep_observed = if diag.sep_observed == 0.0 {
        res.report.sep_observed
    } else {
        diag.sep_observed.min(res.report.sep_observed)
    };
    diag.retries_used += res.report.retries_used;
    diag.split_warnings += res.warnings.len();
    Ok(res.factors)
}

/// Coordinates seen by both runs: a block of a `main` mode and a block of an
/// `other` mode, given as positions within each mode's group.
struct SharedBlock {
    main_mode: usize,
    main_pos: Vec<usize>,
    other_mode: usize,
    other_pos: Vec<usize>,
}

fn shared_blocks(main: &[Vec<usize>], other: &[Vec<usize>]) -> Vec<SharedBlock> {
    let mut out = Vec::new();
    for (a, ga) in main.iter().enumerate() {
        for (b, gb) in other.iter().enumerate() {
            let common: Vec<usize> = ga.iter().copied().filter(|c| gb.contains(c)).collect();
            // A single coordinate always has cosine 1.
            if common.len() >= 2 {
                out.push(SharedBlock {
                    main_mode: a,
                    main_pos: positions(ga, &common),
                    other_mode: b,
                    other_pos: positions(gb, &common),
                });
            }
        }
    }
    out
}

fn abs_cosine(x: &[f64], y: &[f64]) -> f64 {
    let (nx, ny) = (x.iter().map(|a| a * a).sum::<f64>().sqrt(), y.iter().map(|a| a * a).sum::<f64>().sqrt());
    if nx == 0.0 || ny == 0.0 {
        return 0.0;
    }
    (x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / (nx * ny)).abs()
}

/// Matches components of `other` to those of `main` by the absolute cosine
/// of their factor columns on every block of coordinates the two partitions
/// share, averaged with block sizes as weights. Returns `perm[i]` = the
/// `other` term matched to `main` term `i`.
fn match_runs(
    main: &FactorSet,
    main_groups: &[Vec<usize>],
    other: &FactorSet,
    other_groups: &[Vec<usize>],
    margin: f64,
    diag: &mut MeansDiagnostics,
) -> Result<Vec<usize>> {
    let k = main.rank();
    let blocks = shared_blocks(main_groups, other_groups);
    let total: usize = blocks.iter().map(|b| b.main_pos.len()).sum();
    let cost = Matrix::from_fn(k, k, |i, p| {
        let sim: f64 = blocks
            .iter()
            .map(|b| {
                let x = pick(&main.column(b.main_mode, i), &b.main_pos);
                let y = pick(&other.column(b.other_mode, p), &b.other_pos);
                b.main_pos.len() as f64 * abs_cosine(&x, &y)
            })
            .sum::<f64>();
        1.0 - sim / total.max(1) as f64
    });
    let perm = min_cost_assignment(&cost)?;
    if k > 1 {
        for (i, &p) in perm.iter().enumerate() {
            let best = cost[(i, p)].max(0.0);
            let second = (0..k).filter(|&q| q != p).map(|q| cost[(i, q)]).fold(f64::INFINITY, f64::min);
            if !(second >= margin * best) || second <= 0.0 {
                return Err(Error::AmbiguousMatching(format!(
                    "component {i}: best cost {best:e}, runner-up {second:e}"
                )));
            }
            let ratio = if best > 0.0 { second / best } else { f64::INFINITY };
            diag.min_matching_margin = diag.min_matching_margin.min(ratio);
        }
    }
    Ok(perm)
}

fn positions(group: &[usize], part: &[usize]) -> Vec<usize> {
    part.iter().map(|c| group.iter().position(|g| g == c).expect("part of group")).collect()
}

fn pick(v: &[f64], pos: &[usize]) -> Vec<f64> {
    pos.iter().map(|&p| v[p]).collect()
}

/// Coefficient `c` minimizing `‖x − c·y‖`.
fn project(x: &[f64], y: &[f64], floor: f64, term: usize) -> Result<f64> {
    let yy: f64 = y.iter().map(|a| a * a).sum();
    if yy.sqrt() < floor {
        return Err(Error::DegenerateTerm { term, detail: format!("block norm {:e} below {floor:e}", yy.sqrt()) });
    }
    Ok(x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / yy)
}

/// Recovers means and weights: decompose the main partition, fix the scale
/// of every block relative to block 0 through the alt partitions, then use
/// the order-`ℓ+1` moment to split `C_ℓ = w‖μ‖^ℓ` into weight and length.
pub fn learn_means_weights(source: MomentSource, k: usize, scheme: &PartitionScheme, cfg: &GmmConfig) -> Result<MeansWeights> {
    let n = source.n();
    let ell = scheme.ell();
    if ell < 3 {
        return Err(Error::Precondition(format!("need at least 3 groups, got {ell}")));
    }
    check_groups(&scheme.groups, n)?;
    if scheme.groups.iter().map(Vec::len).sum::<usize>() != n {
        return Err(Error::invalid("the groups must cover every coordinate"));
    }
    let mut diag = MeansDiagnostics {
        min_matching_margin: f64::INFINITY,
        theoretical_max_components: (n as f64).powi(((ell - 1) / 2) as i32) / (2 * ell) as f64,
        ..Default::default()
    };
    let main = run_decompose(&source, &scheme.groups, k, cfg, 0, &mut diag)?;

    // ratio[t][i] = c_t / c_0 for component i.
    let mut ratio = vec![vec![1.0; k]; ell];
    for t in 1..ell {
        let alt_groups = scheme.alt_groups(t)?;
        let alt = run_decompose(&source, &alt_groups, k, cfg, t as u64, &mut diag)?;
        let perm = match_runs(&main, &scheme.groups, &alt, &alt_groups, cfg.matching_margin, &mut diag)?;
        let (a0, b0) = halves(&scheme.groups[0]);
        let (at, bt) = halves(&scheme.groups[t]);
        let routes: &[(usize, &[usize], &[usize])] = match cfg.scale_route {
            ScaleRoute::A => &[(0, a0, at)],
            ScaleRoute::B => &[(t, b0, bt)],
            ScaleRoute::Pooled => &[(0, a0, at), (t, b0, bt)],
        };
        for i in 0..k {
            let (mut num, mut den) = (0.0, 0.0);
            for &(alt_mode, part0, partt) in routes {
                let alt_group = &alt_groups[alt_mode];
                let a_alt = alt.column(alt_mode, perm[i]);
                let x0 = pick(&a_alt, &positions(alt_group, part0));
                let xt = pick(&a_alt, &positions(alt_group, partt));
                let y0 = pick(&main.column(0, i), &positions(&scheme.groups[0], part0));
                let yt = pick(&main.column(t, i), &positions(&scheme.groups[t], partt));
                let d0 = project(&x0, &y0, cfg.block_floor, i)?;
                let dt = project(&xt, &yt, cfg.block_floor, i)?;
                if d0.abs() < cfg.block_floor {
                    return Err(Error::DegenerateTerm { term: i, detail: format!("alt run {t} has a vanishing block") });
                }
                // Routes are weighted by the energy of their weaker block.
                let e0: f64 = y0.iter().map(|v| v * v).sum::<f64>() * d0 * d0;
                let et: f64 = yt.iter().map(|v| v * v).sum::<f64>() * dt * dt;
                let weight = e0.min(et);
                num += weight * dt / d0;
                den += weight;
            }
            if !(den > 0.0) {
                return Err(Error::DegenerateTerm { term: i, detail: format!("alt run {t} gives no scale information") });
            }
            ratio[t][i] = num / den;
        }
    }

    // m̂_i = μ_i / c_0 assembled block by block.
    let mut mhat = Matrix::zeros(n, k);
    for i in 0..k {
        for (t, g) in scheme.groups.iter().enumerate() {
            let col = main.column(t, i);
            for (p, &c) in g.iter().enumerate() {
                mhat[(c, i)] = ratio[t][i] * col[p];
            }
        }
    }

    let refined = scheme.refined()?;
    let high = run_decompose(&source, &refined, k, cfg, ell as u64, &mut diag)?;
    let perm = match_runs(&main, &scheme.groups, &high, &refined, cfg.matching_margin, &mut diag)?;

    let mut weights = Vec::with_capacity(k);
    let mut means = Matrix::zeros(n, k);
    let mut c_ell = Vec::with_capacity(k);
    let mut c_ell1 = Vec::with_capacity(k);
    for i in 0..k {
        let m: Vec<f64> = mhat.column(i).iter().copied().collect();
        // Signed w·s^ℓ and w·s^{ℓ+1} where μ = s·m̂.
        let p_ell = main.weights()[i] / (1..ell).map(|t| ratio[t][i]).product::<f64>();
        let mut p_ell1 = high.weights()[perm[i]];
        for (g, grp) in refined.iter().enumerate() {
            let e: f64 = restrict(&m, grp).iter().zip(high.column(g, perm[i])).map(|(a, b)| a * b).sum();
            if e.abs() < cfg.block_floor {
                return Err(Error::DegenerateTerm { term: i, detail: format!("refined block {g} is orthogonal to the mean") });
            }
            p_ell1 /= e;
        }
        let mut s = p_ell1 / p_ell;
        let norm_m = m.iter().map(|x| x * x).sum::<f64>().sqrt();
        let (mut pl, mut pl1) = (p_ell, p_ell1);
        let mut dir: Vec<f64> = m.iter().map(|x| x / norm_m).collect();
        if s < 0.0 {
            s = -s;
            dir.iter_mut().for_each(|x| *x = -*x);
            if ell % 2 == 1 {
                pl = -pl;
            } else {
                pl1 = -pl1;
            }
        }
        let cl = pl * norm_m.powi(ell as i32);
        let cl1 = pl1 * norm_m.powi(ell as i32 + 1);
        if !(cl > 0.0 && cl1 > 0.0 && s.is_finite()) {
            return Err(Error::DegenerateTerm {
                term: i,
                detail: format!("C_ell = {cl:e}, C_ell+1 = {cl1:e} are not both positive"),
            });
        }
        let len = cl1 / cl;
        let u: Vec<f64> = dir.iter().map(|x| x * cl.powf(1.0 / ell as f64)).collect();
        let v: Vec<f64> = dir.iter().map(|x| x * cl1.powf(1.0 / (ell + 1) as f64)).collect();
        weights.push(weight_from_scaled_vectors(&u, &v, ell + 1)?);
        for a in 0..n {
            means[(a, i)] = len * dir[a];
        }
        c_ell.push(cl);
        c_ell1.push(cl1);
    }
    let total: f64 = weights.iter().sum();
    diag.raw_weight_sum = total;
    weights.iter_mut().for_each(|w| *w /= total);
    if k == 1 {
        diag.min_matching_margin = f64::INFINITY;
    }
    Ok(MeansWeights { weights, means, c_ell, c_ell1, diagnostics: diag })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variances {
    /// `n × k`.
    pub variances: Matrix,
    /// Estimates raised to `var_floor`.
    pub clamped: usize,
    /// Smallest `σ_min/σ_max` over the per-coordinate systems.
    pub min_condition: f64,
}

/// Solves, for every coordinate `j`, the linear system
/// `Σ_i z_i ⊗_t μ_i^{(t)} = E[x_j² ⊗_t x_{|S_t}]` over groups of the other
/// coordinates, and reads `σ_ij² = z_i/w_i − μ_ij²`.
pub fn learn_variances(source: MomentSource, weights: &[f64], means: &Matrix, ell: usize, cfg: &GmmConfig) -> Result<Variances> {
    let n = source.n();
    let k = weights.len();
    if means.shape() != (n, k) {
        return Err(Error::shape(format!("means {:?} for n = {n}, k = {k}", means.shape())));
    }
    if weights.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::invalid("weights must be positive"));
    }
    let per_coord: Vec<(Vec<f64>, usize, f64)> = (0..n)
        .into_par_iter()
        .map(|j| {
            let others: Vec<usize> = (0..n).filter(|&c| c != j).collect();
            let groups = PartitionScheme::over(&others, ell)?.groups;
            let cols: Vec<Vec<f64>> = (0..k)
                .map(|i| block_product(&means.column(i).iter().copied().collect::<Vec<_>>(), &groups))
                .collect();
            let rows = cols[0].len();
            let m = Matrix::from_fn(rows, k, |r, i| cols[i][r]);
            let s = svd(&m)?;
            let cond = if s.sigma_max() > 0.0 { s.sigma_min() / s.sigma_max() } else { 0.0 };
            if k > rows || !(cond >= cfg.min_condition) {
                return Err(Error::IllConditioned { sigma_min: s.sigma_min(), threshold: cfg.min_condition * s.sigma_max() });
            }
            let powers: &[u32] = match cfg.variance_estimator {
                VarianceEstimator::Direct => &[2],
                VarianceEstimator::Calibrated => &[0, 1, 2],
            };
            let mut rhs = Matrix::zeros(rows, powers.len());
            for (c, t) in source.coordinate_moments(j, powers, &groups)?.iter().enumerate() {
                rhs.column_mut(c).copy_from_slice(t.data());
            }
            let sol = lstsq(&m, &rhs)?;
            let mut clamped = 0;
            let vars = (0..k)
                .map(|i| {
                    let v = match cfg.variance_estimator {
                        VarianceEstimator::Direct => sol[(i, 0)] / weights[i] - means[(j, i)].powi(2),
                        VarianceEstimator::Calibrated => {
                            let u = sol[(i, 0)];
                            if !(u > 0.0) {
                                return Err(Error::DegenerateTerm {
                                    term: i,
                                    detail: format!("calibrated weight {u:e} for coordinate {j} is not positive"),
                                });
                            }
                            sol[(i, 2)] / u - (sol[(i, 1)] / u).powi(2)
                        }
                    };
                    Ok(if v < cfg.var_floor {
                        clamped += 1;
                        cfg.var_floor
                    } else {
                        v
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok((vars, clamped, cond))
        })
        .collect::<Result<_>>()?;
    let mut variances = Matrix::zeros(n, k);
    let mut clamped = 0;
    let mut min_condition = f64::INFINITY;
    for (j, (v, c, cond)) in per_coord.into_iter().enumerate() {
        for i in 0..k {
            variances[(j, i)] = v[i];
        }
        clamped += c;
        min_condition = min_condition.min(cond);
    }
    Ok(Variances { variances, clamped, min_condition })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnedGmm {
    pub model: AxisAlignedGmm,
    pub means_weights: MeansWeights,
    pub clamped_variances: usize,
    pub variance_condition: f64,
}

/// Full pipeline: means and weights, then variances.
pub fn learn(source: MomentSource, k: usize, scheme: &PartitionScheme, cfg: &GmmConfig) -> Result<LearnedGmm> {
    let mw = learn_means_weights(source, k, scheme, cfg)?;
    let groups = cfg.variance_groups.unwrap_or(scheme.ell());
    let vars = learn_variances(source, &mw.weights, &mw.means, groups, cfg)?;
    Ok(LearnedGmm {
        model: AxisAlignedGmm::new(mw.weights.clone(), mw.means.clone(), vars.variances)?,
        means_weights: mw,
        clamped_variances: vars.clamped,
        variance_condition: vars.min_condition,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GmmEvaluation {
    /// `perm[i]` is the learned component matched to true component `i`.
    pub perm: Vec<usize>,
    pub max_mean_l2: f64,
    pub max_weight_error: f64,
    pub max_variance_rel: f64,
}

/// Matches components by minimum total ℓ₂ distance between means.
pub fn evaluate(learned: &AxisAlignedGmm, truth: &AxisAlignedGmm) -> Result<GmmEvaluation> {
    let k = truth.k();
    if learned.k() != k || learned.n() != truth.n() {
        return Err(Error::shape("learned model has a different shape"));
    }
    let cost = Matrix::from_fn(k, k, |i, p| (truth.means.column(i) - learned.means.column(p)).norm());
    let perm = min_cost_assignment(&cost)?;
    let mut e = GmmEvaluation { perm: perm.clone(), max_mean_l2: 0.0, max_weight_error: 0.0, max_variance_rel: 0.0 };
    for (i, &p) in perm.iter().enumerate() {
        e.max_mean_l2 = e.max_mean_l2.max(cost[(i, p)]);
        e.max_weight_error = e.max_weight_error.max((truth.weights[i] - learned.weights[p]).abs());
        for j in 0..truth.n() {
            let t = truth.variances[(j, i)];
            e.max_variance_rel = e.max_variance_rel.max((learned.variances[(j, p)] - t).abs() / t);
        }
    }
    Ok(e)
}

/// Text form: optional `#` comment lines, a header `n N`, then one sample
/// per line.
pub fn write_samples<W: Write>(mut w: W, s: &GmmSamples, comments: &[String]) -> Result<()> {
    let mut out = String::with_capacity(s.data.len() * 20 + 64);
    for c in comments {
        for line in c.lines() {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
    }
    out.push_str(&format!("{} {}\n", s.n, s.len()));
    for row in s.data.chunks(s.n) {
        let line: Vec<String> = row.iter().map(|&x| format_f64(x)).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    w.write_all(out.as_bytes())?;
    Ok(())
}

pub fn read_samples<R: BufRead>(r: R) -> Result<GmmSamples> {
    let mut header: Option<(usize, usize)> = None;
    let mut data = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        match header {
            None => {
                let nums: Vec<usize> = t.split_whitespace().map(str::parse).collect::<std::result::Result<_, _>>().map_err(|_| {
                    Error::Parse { line: i + 1, msg: "header must be `n N`".into() }
                })?;
                if nums.len() != 2 {
                    return Err(Error::Parse { line: i + 1, msg: "header must be `n N`".into() });
                }
                header = Some((nums[0], nums[1]));
            }
            Some((n, _)) => {
                let before = data.len();
                for tok in t.split_whitespace() {
                    data.push(tok.parse::<f64>().map_err(|_| Error::Parse {
                        line: i + 1,
                        msg: format!("expected a number, found {tok:?}"),
                    })?);
                }
                if data.len() - before != n {
                    return Err(Error::Parse { line: i + 1, msg: format!("expected {n} values, found {}", data.len() - before) });
                }
            }
        }
    }
    let (n, count) = header.ok_or(Error::Parse { line: 1, msg: "missing header".into() })?;
    let s = GmmSamples::new(n, data)?;
    if s.len() != count {
        return Err(Error::Parse { line: 1, msg: format!("header announces {count} samples, found {}", s.len()) });
    }
    Ok(s)
}
