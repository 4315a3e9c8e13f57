//! Multi-view mixture models: each sample draws a hidden component and then
//! `ℓ` conditionally independent categorical observations.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::Gamma;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment::min_cost_assignment;
use crate::decompose::{decompose_overcomplete, DecomposeConfig};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{reconstruct, DenseTensor, FactorSet, Matrix};

const SHARD: usize = 1 << 14;
const DENSE_LIMIT: u128 = 10_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewModel {
    n: usize,
    ell: usize,
    weights: Vec<f64>,
    /// One `n × R` matrix per view; column `i` is component `i`'s distribution.
    means: Vec<Matrix>,
}

/// JSON layout: `means[view][component][coord]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub n: usize,
    pub ell: usize,
    #[serde(rename = "R")]
    pub r: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<Vec<f64>>>,
}

fn check_distribution(v: impl Iterator<Item = f64>, what: &str) -> Result<()> {
    let mut sum = 0.0;
    for x in v {
        if !x.is_finite() || x < 0.0 {
            return Err(Error::invalid(format!("{what} has a negative or non-finite entry {x}")));
        }
        sum += x;
    }
    if (sum - 1.0).abs() > 1e-12 {
        return Err(Error::invalid(format!("{what} sums to {sum}, not 1")));
    }
    Ok(())
}

impl MultiViewModel {
    pub fn new(weights: Vec<f64>, means: Vec<Matrix>) -> Result<Self> {
        let ell = means.len();
        let r = weights.len();
        if ell == 0 || r == 0 {
            return Err(Error::invalid("a model needs at least one view and one component"));
        }
        let n = means[0].nrows();
        if n == 0 || means.iter().any(|m| m.shape() != (n, r)) {
            return Err(Error::shape(format!("every view must be {n} x {r}")));
        }
        check_distribution(weights.iter().copied(), "weights")?;
        for (j, m) in means.iter().enumerate() {
            for i in 0..r {
                check_distribution(m.column(i).iter().copied(), &format!("view {j} component {i}"))?;
            }
        }
        Ok(Self { n, ell, weights, means })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    pub fn rank(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Matrix] {
        &self.means
    }

    pub fn factor_set(&self) -> FactorSet {
        FactorSet::new(self.means.clone(), self.weights.clone()).expect("validated shapes")
    }

    /// `Mom_ℓ = Σ_r w_r ⊗_j μ_r^{(j)}`.
    pub fn exact_moment(&self) -> Result<DenseTensor> {
        reconstruct(&self.factor_set())
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            n: self.n,
            ell: self.ell,
            r: self.rank(),
            weights: self.weights.clone(),
            means: self
                .means
                .iter()
                .map(|m| m.column_iter().map(|c| c.iter().copied().collect()).collect())
                .collect(),
        }
    }

    pub fn from_file(f: &ModelFile) -> Result<Self> {
        if f.means.len() != f.ell || f.weights.len() != f.r {
            return Err(Error::shape("model file counts disagree with its arrays"));
        }
        let means = f
            .means
            .iter()
            .map(|view| {
                if view.len() != f.r || view.iter().any(|c| c.len() != f.n) {
                    return Err(Error::shape(format!("every view needs {} components of length {}", f.r, f.n)));
                }
                Ok(Matrix::from_fn(f.n, f.r, |a, i| view[i][a]))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(f.weights.clone(), means)
    }
}

fn gamma_distribution<R: Rng + ?Sized>(g: &mut R, n: usize, alpha: f64) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("positive shape");
    loop {
        let v: Vec<f64> = (0..n).map(|_| gamma.sample(g)).collect();
        let s: f64 = v.iter().sum();
        if s > 0.0 {
            return v.iter().map(|x| x / s).collect();
        }
    }
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.iter().map(|x| x / s).collect()
}

/// Random model with Dirichlet(`alpha`) component distributions and weights
/// proportional to `1 + U(0, 1)`.
pub fn planted_model(n: usize, ell: usize, r: usize, alpha: f64, seed: u64) -> Result<MultiViewModel> {
    if !(alpha > 0.0) {
        return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
    }
    let mut g = rng::stream(seed, "multiview-weights", &[]);
    let weights = normalized(&(0..r).map(|_| 1.0 + g.random::<f64>()).collect::<Vec<_>>());
    let means = (0..ell)
        .map(|j| {
            let mut m = Matrix::zeros(n, r);
            for i in 0..r {
                let mut g = rng::stream(seed, "multiview-means", &[j as u64, i as u64]);
                m.column_mut(i).copy_from_slice(&gamma_distribution(&mut g, n, alpha));
            }
            m
        })
        .collect();
    MultiViewModel::new(weights, means)
}

/// Well-separated random model: in every view each component gets its own
/// anchor coordinate (a random injection of components into coordinates)
/// and is drawn from a Dirichlet with concentration `alpha` plus `anchor` on
/// that coordinate. Weights are proportional to `1 + U(0, 1)`.
pub fn separated_model(n: usize, ell: usize, r: usize, alpha: f64, anchor: f64, seed: u64) -> Result<MultiViewModel> {
    if !(alpha > 0.0 && anchor >= 0.0) {
        return Err(Error::invalid(format!("need alpha > 0 and anchor >= 0, got {alpha}, {anchor}")));
    }
    if r > n {
        return Err(Error::Precondition(format!("{r} components cannot have distinct anchors among {n} coordinates")));
    }
    let mut g = rng::stream(seed, "multiview-weights", &[]);
    let weights = normalized(&(0..r).map(|_| 1.0 + g.random::<f64>()).collect::<Vec<_>>());
    let base = Gamma::new(alpha, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
    let boosted = Gamma::new(alpha + anchor, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
    let means = (0..ell)
        .map(|j| {
            let mut g = rng::stream(seed, "multiview-anchors", &[j as u64]);
            let mut coords: Vec<usize> = (0..n).collect();
            coords.shuffle(&mut g);
            let mut m = Matrix::zeros(n, r);
            for i in 0..r {
                let mut g = rng::stream(seed, "multiview-means", &[j as u64, i as u64]);
                loop {
                    let v: Vec<f64> =
                        (0..n).map(|a| if a == coords[i] { boosted.sample(&mut g) } else { base.sample(&mut g) }).collect();
                    if v.iter().sum::<f64>() > 0.0 {
                        m.column_mut(i).copy_from_slice(&normalized(&v));
                        break;
                    }
                }
            }
            m
        })
        .collect();
    MultiViewModel::new(weights, means)
}

/// Planted model whose distributions are ρ-perturbed, then made
/// non-negative by absolute value and renormalized.
pub fn perturbed_model(n: usize, ell: usize, r: usize, alpha: f64, rho: f64, seed: u64) -> Result<MultiViewModel> {
    let base = planted_model(n, ell, r, alpha, seed)?;
    let pm = crate::smoothed::PerturbationModel::new(rho, n)?;
    let means = base
        .means
        .iter()
        .enumerate()
        .map(|(j, m)| {
            let p = crate::smoothed::perturb(m, &pm, rng::derive_seed(seed, "multiview-perturb", &[j as u64]))?;
            let mut out = p.abs();
            for mut c in out.column_iter_mut() {
                let s = c.sum();
                c /= s;
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    MultiViewModel::new(base.weights, means)
}

/// Samples stored as one observed category per view.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    n: usize,
    ell: usize,
    views: Vec<u32>,
}

impl Samples {
    pub fn new(n: usize, ell: usize, views: Vec<u32>) -> Result<Self> {
        if n == 0 || ell == 0 || !views.len().is_multiple_of(ell) {
            return Err(Error::shape(format!("{} indices do not split into {ell} views", views.len())));
        }
        if let Some(&bad) = views.iter().find(|&&v| v as usize >= n) {
            return Err(Error::invalid(format!("category {bad} out of range for n = {n}")));
        }
        Ok(Self { n, ell, views })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    pub fn len(&self) -> usize {
        self.views.len() / self.ell
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn get(&self, t: usize) -> &[u32] {
        &self.views[t * self.ell..(t + 1) * self.ell]
    }

    /// The one-hot vectors of sample `t`.
    pub fn indicators(&self, t: usize) -> Vec<Vec<f64>> {
        self.get(t)
            .iter()
            .map(|&c| {
                let mut e = vec![0.0; self.n];
                e[c as usize] = 1.0;
                e
            })
            .collect()
    }

    pub fn truncated(&self, len: usize) -> Samples {
        let len = len.min(self.len());
        Samples { n: self.n, ell: self.ell, views: self.views[..len * self.ell].to_vec() }
    }
}

/// Draws `count` samples. Shards of fixed size use their own streams, so the
/// output does not depend on the thread count.
pub fn sample(model: &MultiViewModel, count: usize, seed: u64) -> Result<Samples> {
    let comp = WeightedIndex::new(&model.weights).map_err(|e| Error::invalid(e.to_string()))?;
    let views: Vec<Vec<WeightedIndex<f64>>> = model
        .means
        .iter()
        .map(|m| {
            m.column_iter()
                .map(|c| WeightedIndex::new(c.iter().copied()).map_err(|e| Error::invalid(e.to_string())))
                .collect()
        })
        .collect::<Result<_>>()?;
    let shards = count.div_ceil(SHARD);
    let parts: Vec<Vec<u32>> = (0..shards)
        .into_par_iter()
        .map(|s| {
            let mut g = rng::stream(seed, "multiview-sample", &[s as u64]);
            let len = SHARD.min(count - s * SHARD);
            let mut out = Vec::with_capacity(len * model.ell);
            for _ in 0..len {
                let i = comp.sample(&mut g);
                for v in &views {
                    out.push(v[i].sample(&mut g) as u32);
                }
            }
            out
        })
        .collect();
    Samples::new(model.n, model.ell, parts.concat())
}

fn linear_index(n: usize, views: &[u32]) -> u64 {
    views.iter().fold(0u64, |acc, &v| acc * n as u64 + v as u64)
}

/// Cell counts of the empirical moment, kept sparse.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMoment {
    pub dims: Vec<usize>,
    pub counts: HashMap<u64, u64>,
    pub total: u64,
}

impl SparseMoment {
    pub fn to_dense(&self) -> Result<DenseTensor> {
        let len: u128 = self.dims.iter().map(|&d| d as u128).product();
        if len > DENSE_LIMIT {
            return Err(Error::invalid(format!("{len} entries are too many to densify")));
        }
        let mut t = DenseTensor::zeros(self.dims.clone())?;
        let inv = 1.0 / self.total as f64;
        for (&k, &c) in &self.counts {
            t.data_mut()[k as usize] = c as f64 * inv;
        }
        Ok(t)
    }
}

fn dims_of(samples: &Samples) -> Result<Vec<usize>> {
    if samples.is_empty() {
        return Err(Error::invalid("no samples"));
    }
    let dims = vec![samples.n; samples.ell];
    let len = dims.iter().try_fold(1u64, |a, &d| a.checked_mul(d as u64));
    if len.is_none() {
        return Err(Error::invalid("moment tensor index space overflows 64 bits"));
    }
    Ok(dims)
}

pub fn empirical_moment_sparse(samples: &Samples) -> Result<SparseMoment> {
    let dims = dims_of(samples)?;
    let chunk = SHARD * samples.ell;
    let maps: Vec<HashMap<u64, u64>> = samples
        .views
        .par_chunks(chunk)
        .map(|c| {
            let mut m = HashMap::new();
            for s in c.chunks(samples.ell) {
                *m.entry(linear_index(samples.n, s)).or_insert(0) += 1;
            }
            m
        })
        .collect();
    let mut counts = HashMap::new();
    for m in maps {
        for (k, c) in m {
            *counts.entry(k).or_insert(0) += c;
        }
    }
    Ok(SparseMoment { dims, counts, total: samples.len() as u64 })
}

/// `(1/N) Σ_t x_t^{(1)} ⊗ … ⊗ x_t^{(ℓ)}`. One-hot samples each add `1/N` to a
/// single cell; counting is exact, so only the final division rounds.
pub fn empirical_moment(samples: &Samples) -> Result<DenseTensor> {
    let dims = dims_of(samples)?;
    let len: u128 = dims.iter().map(|&d| d as u128).product();
    if len > DENSE_LIMIT {
        return empirical_moment_sparse(samples)?.to_dense();
    }
    let chunk = SHARD * samples.ell;
    let counts = samples
        .views
        .par_chunks(chunk)
        .map(|c| {
            let mut counts = vec![0u64; len as usize];
            for s in c.chunks(samples.ell) {
                counts[linear_index(samples.n, s) as usize] += 1;
            }
            counts
        })
        .reduce_with(|mut a, b| {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
            a
        })
        .expect("non-empty samples");
    let inv = 1.0 / samples.len() as f64;
    DenseTensor::new(dims, counts.iter().map(|&c| c as f64 * inv).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnConfig {
    pub decompose: DecomposeConfig,
    /// A recovered view vector with smaller ℓ₁ norm is a degenerate term.
    pub degenerate_floor: f64,
}

impl LearnConfig {
    pub fn new(rank: usize, seed: u64) -> Self {
        let decompose = DecomposeConfig { contractions: 8, refine_sweeps: 20, ..DecomposeConfig::new(rank, seed) };
        Self { decompose, degenerate_floor: 1e-6 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LearnDiagnostics {
    /// Negative entries set to zero before ℓ₁ normalization.
    pub clipped_entries: usize,
    /// Total absolute mass removed by clipping, relative to the ℓ₁ norm of
    /// each vector.
    pub clipped_mass: f64,
    /// Components whose raw weight came out negative and was set to zero.
    pub negative_weights: usize,
    pub split_warnings: usize,
    pub sep_observed: f64,
    pub retries_used: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Learned {
    pub weights: Vec<f64>,
    pub means: Vec<Matrix>,
    pub diagnostics: LearnDiagnostics,
}

impl Learned {
    pub fn to_file(&self) -> ModelFile {
        let n = self.means.first().map_or(0, |m| m.nrows());
        ModelFile {
            n,
            ell: self.means.len(),
            r: self.weights.len(),
            weights: self.weights.clone(),
            means: self
                .means
                .iter()
                .map(|m| m.column_iter().map(|c| c.iter().copied().collect()).collect())
                .collect(),
        }
    }
}

pub fn learn(samples: &Samples, cfg: &LearnConfig) -> Result<Learned> {
    learn_from_moment(&empirical_moment(samples)?, cfg)
}

/// Decomposes a (possibly estimated) moment tensor and rescales every
/// recovered view vector to a probability vector; the removed scales give
/// the weights.
pub fn learn_from_moment(t: &DenseTensor, cfg: &LearnConfig) -> Result<Learned> {
    let r = cfg.decompose.rank;
    let res = decompose_overcomplete(t, &cfg.decompose)?;
    let fs = res.factors;
    let ell = fs.order();
    let mut diag = LearnDiagnostics {
        split_warnings: res.warnings.len(),
        sep_observed: res.report.sep_observed,
        retries_used: res.report.retries_used,
        ..Default::default()
    };
    let mut means: Vec<Matrix> = fs.dims().iter().map(|&d| Matrix::zeros(d, r)).collect();
    let mut weights = Vec::with_capacity(r);
    for i in 0..r {
        let mut w = fs.weights()[i];
        for (j, mean) in means.iter_mut().enumerate() {
            let mut v = fs.column(j, i);
            if v.iter().sum::<f64>() < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
                w = -w;
            }
            let raw_l1: f64 = v.iter().map(|x| x.abs()).sum();
            for x in v.iter_mut().filter(|x| **x < 0.0) {
                diag.clipped_entries += 1;
                diag.clipped_mass += -*x / raw_l1.max(f64::MIN_POSITIVE);
                *x = 0.0;
            }
            let l1: f64 = v.iter().sum();
            if !(l1 >= cfg.degenerate_floor) {
                return Err(Error::DegenerateTerm {
                    term: i,
                    detail: format!("view {j} has l1 norm {l1:e} after clipping"),
                });
            }
            w *= l1;
            mean.column_mut(i).copy_from_slice(&v.iter().map(|x| x / l1).collect::<Vec<_>>());
        }
        if w < 0.0 {
            diag.negative_weights += 1;
            w = 0.0;
        }
        weights.push(w);
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateTerm { term: 0, detail: "all recovered weights are zero".into() });
    }
    weights.iter_mut().for_each(|w| *w /= total);
    debug_assert_eq!(means.len(), ell);
    Ok(Learned { weights, means, diagnostics: diag })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    /// `perm[i]` is the learned component matched to true component `i`.
    pub perm: Vec<usize>,
    /// `max_{i,j} ‖μ̂ − μ‖₁` over matched components and views.
    pub max_mean_l1: f64,
    pub max_weight_error: f64,
}

/// Matches components by minimum total ℓ₁ distance of the concatenated
/// views.
pub fn evaluate(learned: &Learned, truth: &MultiViewModel) -> Result<Evaluation> {
    let r = truth.rank();
    if learned.weights.len() != r || learned.means.len() != truth.ell {
        return Err(Error::shape("learned parameters do not match the model's shape"));
    }
    let dist = |i: usize, k: usize, j: usize| -> f64 {
        (truth.means[j].column(i) - learned.means[j].column(k)).abs().sum()
    };
    let cost = Matrix::from_fn(r, r, |i, k| (0..truth.ell).map(|j| dist(i, k, j)).sum());
    let perm = min_cost_assignment(&cost)?;
    let mut max_mean_l1: f64 = 0.0;
    let mut max_weight_error: f64 = 0.0;
    for (i, &k) in perm.iter().enumerate() {
        for j in 0..truth.ell {
            max_mean_l1 = max_mean_l1.max(dist(i, k, j));
        }
        max_weight_error = max_weight_error.max((truth.weights[i] - learned.weights[k]).abs());
    }
    Ok(Evaluation { perm, max_mean_l1, max_weight_error })
}

/// Text format: comment lines starting with `#`, a header `n ell N`, then
/// one line of `ℓ` category indices per sample.
pub fn write_samples<W: Write>(mut w: W, s: &Samples, comments: &[String]) -> Result<()> {
    let mut out = String::with_capacity(s.views.len() * 3 + 64);
    for c in comments {
        for line in c.lines() {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
    }
    out.push_str(&format!("{} {} {}\n", s.n, s.ell, s.len()));
    for t in 0..s.len() {
        let line: Vec<String> = s.get(t).iter().map(u32::to_string).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    w.write_all(out.as_bytes())?;
    Ok(())
}

pub fn read_samples<R: BufRead>(r: R) -> Result<Samples> {
    let mut header: Option<(usize, usize, usize)> = None;
    let mut views = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let nums = t
            .split_whitespace()
            .map(|tok| {
                tok.parse::<u64>().map_err(|_| Error::Parse {
                    line: i + 1,
                    msg: format!("expected a non-negative integer, found {tok:?}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        match header {
            None => {
                if nums.len() != 3 {
                    return Err(Error::Parse { line: i + 1, msg: "header must be `n ell N`".into() });
                }
                header = Some((nums[0] as usize, nums[1] as usize, nums[2] as usize));
            }
            Some((n, ell, _)) => {
                if nums.len() != ell {
                    return Err(Error::Parse { line: i + 1, msg: format!("expected {ell} views, found {}", nums.len()) });
                }
                for v in nums {
                    if v >= n as u64 {
                        return Err(Error::Parse { line: i + 1, msg: format!("category {v} out of range for n = {n}") });
                    }
                    views.push(v as u32);
                }
            }
        }
    }
    let (n, ell, count) = header.ok_or(Error::Parse { line: 1, msg: "missing header".into() })?;
    let s = Samples::new(n, ell, views)?;
    if s.len() != count {
        return Err(Error::Parse { line: 1, msg: format!("header announces {count} samples, found {}", s.len()) });
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn point_mass(n: usize, at: usize) -> Matrix {
        let mut m = Matrix::zeros(n, 1);
        m[(at, 0)] = 1.0;
        m
    }

    #[test]
    fn point_mass_model_always_emits_the_same_sample() {
        let model = MultiViewModel::new(vec![1.0], vec![point_mass(3, 0); 3]).unwrap();
        let s = sample(&model, 100, 1).unwrap();
        assert!((0..s.len()).all(|t| s.get(t) == [0, 0, 0]));
    }

    #[test]
    fn zero_weight_component_is_never_drawn() {
        let mut m = Matrix::zeros(2, 2);
        m[(0, 0)] = 1.0;
        m[(1, 1)] = 1.0;
        let model = MultiViewModel::new(vec![1.0, 0.0], vec![m.clone(), m]).unwrap();
        let s = sample(&model, 1000, 2).unwrap();
        assert!((0..s.len()).all(|t| s.get(t) == [0, 0]));
    }

    #[test]
    fn component_frequencies_follow_the_weights() {
        let mut m = Matrix::zeros(2, 2);
        m[(0, 0)] = 1.0;
        m[(1, 1)] = 1.0;
        let model = MultiViewModel::new(vec![0.3, 0.7], vec![m]).unwrap();
        let n = 100_000;
        let s = sample(&model, n, 3).unwrap();
        let ones = (0..n).filter(|&t| s.get(t)[0] == 1).count() as f64;
        // χ² with one degree of freedom at the 1% level.
        let e1 = 0.7 * n as f64;
        let e0 = 0.3 * n as f64;
        let chi2 = (ones - e1).powi(2) / e1 + (n as f64 - ones - e0).powi(2) / e0;
        assert!(chi2 < 6.635, "chi2 = {chi2}");
        assert!((ones / n as f64 - 0.7).abs() < 0.01);
    }

    #[test]
    fn single_sample_moment() {
        let s = Samples::new(2, 2, vec![0, 1]).unwrap();
        let t = empirical_moment(&s).unwrap();
        assert_eq!(t.data(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn identical_samples_give_their_outer_product() {
        let s = Samples::new(3, 3, [2, 0, 1].repeat(7)).unwrap();
        let t = empirical_moment(&s).unwrap();
        assert_eq!(t.get(&[2, 0, 1]), 1.0);
        assert_eq!(t.data().iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn sparse_and_dense_agree() {
        let model = planted_model(4, 3, 3, 1.0, 9).unwrap();
        let s = sample(&model, 5000, 1).unwrap();
        assert_eq!(empirical_moment(&s).unwrap(), empirical_moment_sparse(&s).unwrap().to_dense().unwrap());
    }

    #[test]
    fn large_sample_moment_approaches_the_exact_one() {
        let model = planted_model(4, 3, 3, 1.0, 11).unwrap();
        let s = sample(&model, 1_000_000, 5).unwrap();
        let diff = empirical_moment(&s).unwrap().sub(&model.exact_moment().unwrap()).unwrap();
        assert!(diff.max_abs() < 2e-3, "{}", diff.max_abs());
    }

    #[test]
    fn exact_moment_matches_symbolic_sum() {
        let model = planted_model(3, 3, 2, 1.0, 4).unwrap();
        let t = model.exact_moment().unwrap();
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    let want: f64 = (0..2)
                        .map(|i| {
                            model.weights()[i]
                                * model.means()[0][(a, i)]
                                * model.means()[1][(b, i)]
                                * model.means()[2][(c, i)]
                        })
                        .sum();
                    assert!((t.get(&[a, b, c]) - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rank_one_learns_marginals() {
        let model = planted_model(4, 3, 1, 1.0, 2).unwrap();
        let s = sample(&model, 20_000, 8).unwrap();
        let learned = learn(&s, &LearnConfig::new(1, 0)).unwrap();
        assert!((learned.weights[0] - 1.0).abs() < 1e-12);
        for j in 0..3 {
            let mut freq = [0.0; 4];
            for t in 0..s.len() {
                freq[s.get(t)[j] as usize] += 1.0 / s.len() as f64;
            }
            for a in 0..4 {
                // The empirical tensor is rank one only up to sampling noise.
                assert!((learned.means[j][(a, 0)] - freq[a]).abs() < 0.02);
            }
        }
        let exact = learn_from_moment(&model.exact_moment().unwrap(), &LearnConfig::new(1, 0)).unwrap();
        for j in 0..3 {
            assert!((&exact.means[j] - &model.means()[j]).amax() < 1e-12);
        }
    }

    #[test]
    fn exact_moment_recovery() {
        let model = planted_model(6, 3, 4, 0.5, 21).unwrap();
        let learned = learn_from_moment(&model.exact_moment().unwrap(), &LearnConfig::new(4, 1)).unwrap();
        let e = evaluate(&learned, &model).unwrap();
        assert!(e.max_mean_l1 < 1e-6 && e.max_weight_error < 1e-6, "{e:?}");
        assert_eq!(learned.diagnostics.clipped_entries, 0);
    }

    #[test]
    fn samples_round_trip_through_text() {
        let model = planted_model(5, 4, 2, 1.0, 3).unwrap();
        let s = sample(&model, 50, 2).unwrap();
        let mut buf = Vec::new();
        write_samples(&mut buf, &s, &["seed 2".into()]).unwrap();
        assert_eq!(read_samples(buf.as_slice()).unwrap(), s);
        assert!(read_samples("2 2 1\n0 2\n".as_bytes()).is_err());
    }

    #[test]
    fn model_file_round_trip() {
        let model = planted_model(3, 3, 2, 1.0, 3).unwrap();
        let json = serde_json::to_string(&model.to_file()).unwrap();
        let back = MultiViewModel::from_file(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn separated_model_gives_each_component_an_anchor() {
        let m = separated_model(6, 3, 4, 0.5, 50.0, 3).unwrap();
        for view in m.means() {
            let anchors: Vec<usize> = view.column_iter().map(|c| c.iamax()).collect();
            let mut sorted = anchors.clone();
            sorted.sort();
            sorted.dedup();
            assert_eq!(sorted.len(), 4, "{anchors:?}");
            for c in view.column_iter() {
                assert!((c.sum() - 1.0).abs() < 1e-12 && c.min() >= 0.0);
            }
        }
        assert!(separated_model(3, 3, 4, 0.5, 5.0, 0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn moment_entries_sum_to_one(n in 1usize..5, ell in 1usize..4, count in 1usize..300, seed in any::<u64>()) {
            let model = planted_model(n, ell, 2, 1.0, seed).unwrap();
            let s = sample(&model, count, seed).unwrap();
            let t = empirical_moment(&s).unwrap();
            prop_assert!((t.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn learned_weights_are_a_distribution(seed in 0u64..1000) {
            let model = planted_model(5, 3, 3, 0.5, seed).unwrap();
            let s = sample(&model, 20_000, seed).unwrap();
            if let Ok(l) = learn(&s, &LearnConfig::new(3, seed)) {
                prop_assert!(l.weights.iter().all(|&w| w >= 0.0));
                prop_assert!((l.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
