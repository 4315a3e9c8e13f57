//! The frozen acceptance suite.
//!
//! Every criterion is a deterministic function of its seeds. Each one feeds
//! its numeric outputs (never timings) into a fingerprint, and the
//! determinism criterion reruns the others and compares fingerprints.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use overcomplete::assignment::min_cost_assignment;
use overcomplete::decompose::{decompose_order3, decompose_overcomplete, recovery_error, DecomposeConfig};
use overcomplete::gaussians::{self, GmmConfig, MomentSource, PartitionScheme};
use overcomplete::linalg::{
    eig_nonsymmetric, eig_perturbation_bound, krank_additive_check, leave_one_out_distance, orthonormalize,
    singular_values,
};
use overcomplete::multiview::{self, LearnConfig};
use overcomplete::planted::{conditioned_unit_columns, gaussian_matrix, planted_full_rank, planted_perturbed};
use overcomplete::rng;
use overcomplete::smoothed::{
    build_orthogonal_system, kr_sigma_min_sweep, q_matrix_experiment, quantile, robust_column_dimensions,
    verify_orthogonal_system, BaseFamily, PerturbationModel, SweepGrid,
};
use overcomplete::tensor::{reconstruct, DenseTensor, Matrix};
use overcomplete::{Error, Result};

/// Number of criteria, including the determinism check.
pub const CRITERIA: usize = 13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Full,
    /// Reduced instance counts and sample sizes, same thresholds.
    Quick,
}

impl Scale {
    fn pick(self, full: usize, quick: usize) -> usize {
        match self {
            Scale::Full => full,
            Scale::Quick => quick,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CriterionResult {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    pub summary: String,
    pub metrics: BTreeMap<String, f64>,
    /// SHA-256 over the criterion's numeric outputs.
    pub fingerprint: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub scale: Scale,
    pub build: String,
    pub passed: bool,
    pub criteria: Vec<CriterionResult>,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        format!(
            "[{}] {:>2} {:<32} {} ({:.1} s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.summary,
            self.seconds
        )
    }
}

#[derive(Default)]
struct Fingerprint(Sha256);

impl Fingerprint {
    fn f64(&mut self, x: f64) {
        self.0.update(x.to_bits().to_le_bytes());
    }

    fn f64s(&mut self, xs: &[f64]) {
        xs.iter().for_each(|&x| self.f64(x));
    }

    fn u64(&mut self, x: u64) {
        self.0.update(x.to_le_bytes());
    }

    fn finish(self) -> String {
        self.0.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

struct Outcome {
    passed: bool,
    summary: String,
    metrics: BTreeMap<String, f64>,
    fp: Fingerprint,
}

impl Outcome {
    fn new(passed: bool, summary: String, metrics: &[(&str, f64)], fp: Fingerprint) -> Self {
        let metrics = metrics.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        Outcome { passed, summary, metrics, fp }
    }
}

const NAMES: [&str; CRITERIA] = [
    "full-rank exactness",
    "noise stability",
    "overcomplete recovery",
    "leave-one-out sandwich",
    "k-rank additivity",
    "Khatri-Rao smoothed conditioning",
    "orthogonal-system construction",
    "robust dimensions",
    "Q-matrix singular values",
    "multi-view pipeline",
    "Gaussian mixture pipeline",
    "eigenvector perturbation bound",
    "determinism",
];

pub fn name(id: usize) -> &'static str {
    NAMES[id - 1]
}

/// Runs criteria `1..=12` by id. The determinism criterion is handled by
/// [`run_suite`].
pub fn run_criterion(id: usize, scale: Scale) -> CriterionResult {
    let start = Instant::now();
    let outcome = match id {
        1 => full_rank_exactness(scale),
        2 => noise_stability(scale),
        3 => overcomplete_recovery(scale),
        4 => leave_one_out_sandwich(scale),
        5 => krank_additivity(scale),
        6 => kr_conditioning(scale),
        7 => orthosys_construction(scale),
        8 => robust_dimensions(scale),
        9 => q_matrix(scale),
        10 => multiview_pipeline(scale),
        11 => gaussian_pipeline(scale),
        12 => perturbation_bound(scale),
        _ => Err(Error::InvalidArgument(format!("no criterion {id}"))),
    };
    let seconds = start.elapsed().as_secs_f64();
    match outcome {
        Ok(o) => CriterionResult {
            id,
            name: name(id),
            passed: o.passed,
            summary: o.summary,
            metrics: o.metrics,
            fingerprint: o.fp.finish(),
            seconds,
        },
        Err(e) => CriterionResult {
            id,
            name: name(id),
            passed: false,
            summary: format!("error: {e}"),
            metrics: BTreeMap::new(),
            fingerprint: String::new(),
            seconds,
        },
    }
}

/// Runs every criterion, then reruns criteria 1 to 12 and compares
/// fingerprints. `progress` sees each result as it completes.
pub fn run_suite(scale: Scale, mut progress: impl FnMut(&CriterionResult)) -> SuiteReport {
    let mut criteria = Vec::with_capacity(CRITERIA);
    for id in 1..CRITERIA {
        let r = run_criterion(id, scale);
        progress(&r);
        criteria.push(r);
    }
    let start = Instant::now();
    let mut mismatched = Vec::new();
    let mut fp = Fingerprint::default();
    for first in &criteria {
        let again = run_criterion(first.id, scale);
        if again.fingerprint.is_empty() || again.fingerprint != first.fingerprint {
            mismatched.push(first.id);
        }
        fp.0.update(again.fingerprint.as_bytes());
    }
    let summary = if mismatched.is_empty() {
        format!("{} criteria rerun, fingerprints identical", criteria.len())
    } else {
        format!("fingerprints differ or missing for criteria {mismatched:?}")
    };
    let det = CriterionResult {
        id: CRITERIA,
        name: name(CRITERIA),
        passed: mismatched.is_empty(),
        summary,
        metrics: BTreeMap::from([("mismatches".to_string(), mismatched.len() as f64)]),
        fingerprint: fp.finish(),
        seconds: start.elapsed().as_secs_f64(),
    };
    progress(&det);
    criteria.push(det);
    SuiteReport {
        scale,
        build: crate::BUILD_ID.to_string(),
        passed: criteria.iter().all(|c| c.passed),
        criteria,
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

fn gaussian(seed: u64, label: &str, idx: &[u64], rows: usize, cols: usize) -> Matrix {
    gaussian_matrix(&mut rng::stream(seed, label, idx), rows, cols)
}

fn uniform_int(seed: u64, label: &str, idx: &[u64], lo: usize, hi: usize) -> usize {
    lo + (rng::derive_seed(seed, label, idx) % (hi - lo + 1) as u64) as usize
}

const SUITE_SEED: u64 = 20_240_601;

fn full_rank_exactness(scale: Scale) -> Result<Outcome> {
    let count = scale.pick(500, 60);
    let start = Instant::now();
    let runs: Vec<(usize, Result<f64>)> = (0..count)
        .into_par_iter()
        .map(|i| {
            let n = [5, 8, 12][i % 3];
            let seed = rng::derive_seed(SUITE_SEED, "c1", &[i as u64]);
            let run = || -> Result<f64> {
                let truth = planted_full_rank(n, n, 20.0, seed)?;
                let (found, _) = decompose_order3(&reconstruct(&truth)?, &DecomposeConfig::new(n, seed))?;
                recovery_error(&found, &truth)
            };
            (n, run())
        })
        .collect();
    let wall = start.elapsed().as_secs_f64();
    let mut fp = Fingerprint::default();
    let (mut worst, mut exhausted, mut other) = (0.0f64, 0, 0);
    for (_, r) in &runs {
        match r {
            Ok(e) => {
                worst = worst.max(*e);
                fp.f64(*e);
            }
            Err(Error::RetriesExhausted { .. }) => {
                exhausted += 1;
                fp.u64(u64::MAX);
            }
            Err(_) => {
                other += 1;
                fp.u64(u64::MAX - 1);
            }
        }
    }
    let rate = exhausted as f64 / count as f64;
    let passed = worst <= 1e-7 && other == 0 && rate <= 0.01 && wall <= 30.0;
    Ok(Outcome::new(
        passed,
        format!("{count} instances, max error {worst:.2e}, exhausted {exhausted}, other errors {other}, {wall:.1} s"),
        &[("max_error", worst), ("exhaustion_rate", rate), ("errors", other as f64), ("wall_s", wall)],
        fp,
    ))
}

fn noise_stability(_: Scale) -> Result<Outcome> {
    let start = Instant::now();
    let seed = rng::derive_seed(SUITE_SEED, "c2", &[]);
    let truth = planted_full_rank(8, 8, 20.0, seed)?;
    let clean = reconstruct(&truth)?;
    let g = rng::gaussian_vec(&mut rng::stream(seed, "c2-noise", &[]), clean.len());
    let gn = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    let eps = [1e-10, 1e-8, 1e-6, 1e-4];
    let mut errs = Vec::new();
    let mut fp = Fingerprint::default();
    for &e in &eps {
        let data: Vec<f64> = clean.data().iter().zip(&g).map(|(t, n)| t + e * n / gn).collect();
        let noisy = DenseTensor::new(clean.dims().to_vec(), data)?;
        let (found, _) = decompose_order3(&noisy, &DecomposeConfig::new(8, seed))?;
        let err = recovery_error(&found, &truth)?;
        fp.f64(err);
        errs.push(err);
    }
    let slope = log_log_slope(&eps, &errs);
    let wall = start.elapsed().as_secs_f64();
    let passed = (slope - 1.0).abs() <= 0.3 && wall <= 10.0;
    Ok(Outcome::new(
        passed,
        format!("slope {slope:.3}, errors {}", fmt_list(&errs)),
        &[("slope", slope), ("wall_s", wall)],
        fp,
    ))
}

fn overcomplete_recovery(scale: Scale) -> Result<Outcome> {
    let trials = scale.pick(100, 20);
    let start = Instant::now();
    let errs: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let seed = rng::derive_seed(SUITE_SEED, "c3", &[i as u64]);
            let run = || -> Result<f64> {
                let truth = planted_perturbed(5, 4, 7, 0.1, seed)?;
                let res = decompose_overcomplete(&reconstruct(&truth)?, &DecomposeConfig::new(7, seed))?;
                recovery_error(&res.factors, &truth)
            };
            run().unwrap_or(f64::INFINITY)
        })
        .collect();
    let wall = start.elapsed().as_secs_f64();
    let mut fp = Fingerprint::default();
    fp.f64s(&errs);
    let good = errs.iter().filter(|&&e| e <= 1e-5).count();
    let need = (trials * 95).div_ceil(100);
    let passed = good >= need && wall <= 120.0;
    Ok(Outcome::new(
        passed,
        format!("{good}/{trials} within 1e-5 (need {need}), median error {:.2e}, {wall:.1} s", quantile(&errs, 0.5)),
        &[("successes", good as f64), ("trials", trials as f64), ("wall_s", wall)],
        fp,
    ))
}

fn leave_one_out_sandwich(scale: Scale) -> Result<Outcome> {
    let count = scale.pick(200, 50);
    let rows: Vec<Result<(f64, f64, usize)>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let idx = [i as u64];
            let rows = uniform_int(SUITE_SEED, "c4-rows", &idx, 2, 12);
            let cols = uniform_int(SUITE_SEED, "c4-cols", &idx, 1, rows.min(10));
            let mut a = gaussian(SUITE_SEED, "c4", &idx, rows, cols);
            // Uneven column scales and a near-duplicate make the bound work.
            for c in 0..cols {
                let s = 10f64.powf(uniform_int(SUITE_SEED, "c4-scale", &[i as u64, c as u64], 0, 4) as f64 - 2.0);
                a.column_mut(c).scale_mut(s);
            }
            if cols >= 2 && i % 4 == 0 {
                let near = a.column(0) + a.column(1).scale(1e-6);
                a.set_column(1, &near);
            }
            let loo = leave_one_out_distance(&a)?.distance;
            let smin = singular_values(&a)?[cols - 1];
            Ok((loo, smin, cols))
        })
        .collect();
    let mut fp = Fingerprint::default();
    let mut violations = 0;
    let mut worst_ratio = f64::INFINITY;
    for r in rows {
        let (loo, smin, cols) = r?;
        fp.f64s(&[loo, smin]);
        let slack = 1e-10;
        if loo / (cols as f64).sqrt() > smin + slack || smin > loo + slack {
            violations += 1;
        }
        if loo > 0.0 {
            worst_ratio = worst_ratio.min(smin / loo);
        }
    }
    Ok(Outcome::new(
        violations == 0,
        format!("{count} matrices, {violations} violations, smallest sigma_min/l(A) {worst_ratio:.3}"),
        &[("violations", violations as f64)],
        fp,
    ))
}

fn krank_additivity(scale: Scale) -> Result<Outcome> {
    let count = scale.pick(100, 30);
    let checks: Vec<Result<bool>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let idx = [i as u64];
            let r = uniform_int(SUITE_SEED, "c5-r", &idx, 2, 8);
            let nu = uniform_int(SUITE_SEED, "c5-nu", &idx, 2, 6);
            let nv = uniform_int(SUITE_SEED, "c5-nv", &idx, 2, 6);
            let mut u = gaussian(SUITE_SEED, "c5-u", &idx, nu, r);
            let mut v = gaussian(SUITE_SEED, "c5-v", &idx, nv, r);
            // Every third pair gets a repeated column, every fifth a column
            // that is a combination of two others.
            if i % 3 == 0 {
                let c = u.column(0).into_owned();
                u.set_column(r - 1, &c);
            }
            if i % 5 == 0 && r >= 3 {
                let c = v.column(0) + v.column(1) * 2.0;
                v.set_column(2, &c);
            }
            krank_additive_check(&u, &v)
        })
        .collect();
    let mut fp = Fingerprint::default();
    let mut violations = 0;
    for c in checks {
        let ok = c?;
        fp.u64(ok as u64);
        violations += usize::from(!ok);
    }
    Ok(Outcome::new(
        violations == 0,
        format!("{count} pairs, {violations} violations"),
        &[("violations", violations as f64)],
        fp,
    ))
}

/// Families whose unperturbed Khatri-Rao product is rank deficient, so that
/// `σ_min` is created by the perturbation alone.
fn slope_checked(base: BaseFamily) -> bool {
    matches!(base, BaseFamily::Zero | BaseFamily::Rank1)
}

fn kr_conditioning(scale: Scale) -> Result<Outcome> {
    let start = Instant::now();
    let rhos = vec![0.01, 0.03, 0.1, 0.3];
    let grid = SweepGrid {
        ns: vec![20],
        ranks: vec![100],
        orders: vec![2],
        rhos: rhos.clone(),
        bases: BaseFamily::ALL.to_vec(),
        trials: scale.pick(50, 10),
        seed: rng::derive_seed(SUITE_SEED, "c6", &[]),
        failure_threshold: 1e-9,
    };
    let (results, _) = kr_sigma_min_sweep(&grid)?;
    let wall = start.elapsed().as_secs_f64();
    let mut fp = Fingerprint::default();
    let mut min_at_main = f64::INFINITY;
    let mut slopes = Vec::new();
    let mut passed = true;
    let mut metrics = BTreeMap::new();
    for base in BaseFamily::ALL {
        let pts: Vec<_> = results.iter().filter(|r| r.base == base).collect();
        for p in &pts {
            fp.f64s(&p.sigma_min);
            if p.rho == 0.1 {
                min_at_main = min_at_main.min(p.min);
            }
        }
        let medians: Vec<f64> = pts.iter().map(|p| p.median).collect();
        let slope = log_log_slope(&rhos, &medians);
        let checked = slope_checked(base);
        if checked {
            passed &= (slope - 2.0).abs() <= 0.5;
        }
        slopes.push(format!("{} {slope:.2}{}", base.name(), if checked { "" } else { " (reported)" }));
        metrics.insert(format!("slope_{}", base.name()), slope);
    }
    let pooled: Vec<f64> = rhos
        .iter()
        .map(|&rho| {
            let all: Vec<f64> = results.iter().filter(|r| r.rho == rho).flat_map(|r| r.sigma_min.clone()).collect();
            quantile(&all, 0.5)
        })
        .collect();
    let pooled_slope = log_log_slope(&rhos, &pooled);
    metrics.insert("slope_pooled".into(), pooled_slope);
    passed &= (pooled_slope - 2.0).abs() <= 0.5 && min_at_main > 1e-9 && wall <= 60.0;
    let mut out = Outcome::new(
        passed,
        format!(
            "min sigma at rho 0.1 {min_at_main:.2e}; slopes pooled {pooled_slope:.2}, {}",
            slopes.join(", ")
        ),
        &[("min_sigma_rho_0.1", min_at_main), ("wall_s", wall)],
        fp,
    );
    out.metrics.extend(metrics);
    Ok(out)
}

/// Draws `(n, m, dim, r, s)` with `s ≤ δm/2` and `r·s ≤ δn/3`, `δ = dim/(nm)`.
fn orthosys_instance(seed: u64, i: u64) -> (usize, usize, usize, usize, usize) {
    for attempt in 0.. {
        let idx = [i, attempt];
        let n = uniform_int(seed, "c7-n", &idx, 6, 14);
        let m = uniform_int(seed, "c7-m", &idx, 2, 6);
        let dim = uniform_int(seed, "c7-dim", &idx, (n * m) / 2, n * m);
        let delta = dim as f64 / (n * m) as f64;
        let s_max = (delta * m as f64 / 2.0).floor() as usize;
        if s_max == 0 {
            continue;
        }
        let s = uniform_int(seed, "c7-s", &idx, 1, s_max);
        let r_max = (delta * n as f64 / 3.0 / s as f64).floor() as usize;
        if r_max == 0 {
            continue;
        }
        let r = uniform_int(seed, "c7-r", &idx, 1, r_max);
        return (n, m, dim, r, s);
    }
    unreachable!()
}

fn orthosys_construction(scale: Scale) -> Result<Outcome> {
    let count = scale.pick(500, 60);
    let seed = rng::derive_seed(SUITE_SEED, "c7", &[]);
    let runs: Vec<(f64, bool)> = (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let (n, m, dim, r, s) = orthosys_instance(seed, i);
            let basis = orthonormalize(&gaussian(seed, "c7-basis", &[i], n * m, dim), 1e-10);
            let target = 1.0 / ((n * m * m * m) as f64).sqrt();
            match build_orthogonal_system(&basis, n, m, r, s, rng::derive_seed(seed, "c7-build", &[i])) {
                Ok(sys) => {
                    let v = verify_orthogonal_system(&sys);
                    (v.worst_residual, v.ok && sys.theta >= target * (1.0 - 1e-12))
                }
                Err(_) => (f64::NAN, false),
            }
        })
        .collect();
    let mut fp = Fingerprint::default();
    let failures = runs.iter().filter(|r| !r.1).count();
    let worst = runs.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
    runs.iter().for_each(|r| fp.f64(r.0));
    Ok(Outcome::new(
        failures == 0,
        format!("{count} instances, {failures} failures, smallest residual {worst:.3e}"),
        &[("failures", failures as f64)],
        fp,
    ))
}

fn robust_dimensions(scale: Scale) -> Result<Outcome> {
    let count = scale.pick(200, 50);
    let runs: Vec<Result<(usize, Vec<usize>)>> = (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let p1 = uniform_int(SUITE_SEED, "c8-p1", &[i], 1, 6);
            let p2 = uniform_int(SUITE_SEED, "c8-p2", &[i], 1, 6);
            let d = uniform_int(SUITE_SEED, "c8-d", &[i], 1, p1 * p2);
            let basis = orthonormalize(&gaussian(SUITE_SEED, "c8", &[i], p1 * p2, d), 1e-10);
            Ok((basis.ncols(), robust_column_dimensions(&basis, p1, p2)?))
        })
        .collect();
    let mut fp = Fingerprint::default();
    let mut violations = 0;
    for r in runs {
        let (dim, dims) = r?;
        dims.iter().for_each(|&d| fp.u64(d as u64));
        violations += usize::from(dims.iter().sum::<usize>() < dim);
    }
    Ok(Outcome::new(
        violations == 0,
        format!("{count} subspaces, {violations} violations"),
        &[("violations", violations as f64)],
        fp,
    ))
}

fn q_matrix(scale: Scale) -> Result<Outcome> {
    let systems = scale.pick(5, 2);
    let trials = 1000;
    let seed = rng::derive_seed(SUITE_SEED, "c9", &[]);
    let mut fp = Fingerprint::default();
    let mut worst: f64 = 0.0;
    for k in 0..systems as u64 {
        let (n, m, r) = (10, 4, 4);
        let basis = orthonormalize(&gaussian(seed, "c9-basis", &[k], n * m, 3 * n * m / 4), 1e-10);
        let sys = build_orthogonal_system(&basis, n, m, r, 1, rng::derive_seed(seed, "c9-build", &[k]))?;
        let base = rng::unit_sphere(&mut rng::stream(seed, "c9-x", &[k]), n);
        let pm = PerturbationModel::new(0.1, n)?;
        let exp = q_matrix_experiment(&sys, &base, &pm, trials, rng::derive_seed(seed, "c9-trials", &[k]))?;
        fp.f64s(&exp.samples);
        worst = worst.max(exp.fraction_below);
    }
    Ok(Outcome::new(
        worst <= 0.01,
        format!("{systems} systems x {trials} trials, largest fraction below threshold {worst:.4}"),
        &[("max_fraction_below", worst)],
        fp,
    ))
}

fn multiview_pipeline(scale: Scale) -> Result<Outcome> {
    let seeds = scale.pick(10, 3) as u64;
    let sizes: Vec<usize> = match scale {
        Scale::Full => vec![10_000, 100_000, 1_000_000],
        Scale::Quick => vec![10_000, 100_000],
    };
    let per_seed: Vec<Result<(f64, Vec<f64>)>> = (0..seeds)
        .into_par_iter()
        .map(|seed| {
            let model = multiview::separated_model(6, 3, 4, 0.5, 5.0, seed)?;
            let cfg = LearnConfig::new(4, seed);
            let exact = multiview::learn_from_moment(&model.exact_moment()?, &cfg)
                .and_then(|l| multiview::evaluate(&l, &model))
                .map(|e| e.max_mean_l1.max(e.max_weight_error))
                .unwrap_or(f64::INFINITY);
            let samples = multiview::sample(&model, *sizes.last().unwrap(), seed + 100)?;
            let sampled = sizes
                .iter()
                .map(|&n| {
                    multiview::learn(&samples.truncated(n), &cfg)
                        .and_then(|l| multiview::evaluate(&l, &model))
                        .map(|e| e.max_mean_l1)
                        .unwrap_or(f64::INFINITY)
                })
                .collect();
            Ok((exact, sampled))
        })
        .collect();
    let mut fp = Fingerprint::default();
    let mut exact_worst: f64 = 0.0;
    let mut by_size = vec![Vec::new(); sizes.len()];
    for r in per_seed {
        let (e, s) = r?;
        fp.f64(e);
        fp.f64s(&s);
        exact_worst = exact_worst.max(e);
        s.iter().enumerate().for_each(|(k, &v)| by_size[k].push(v));
    }
    let medians: Vec<f64> = by_size.iter().map(|v| quantile(v, 0.5)).collect();
    let monotone = medians.windows(2).all(|w| w[1] < w[0]);
    let last = *medians.last().unwrap();
    let passed = exact_worst <= 1e-6 && last <= 0.05 && monotone;
    Ok(Outcome::new(
        passed,
        format!(
            "exact max error {exact_worst:.1e}; median l1 mean error {} at N = {}",
            fmt_list(&medians),
            sizes.iter().map(|n| n.to_string()).collect::<Vec<_>>().join("/")
        ),
        &[("exact_max_error", exact_worst), ("median_l1_largest_n", last), ("monotone", monotone as u8 as f64)],
        fp,
    ))
}

fn gaussian_pipeline(scale: Scale) -> Result<Outcome> {
    let seeds = scale.pick(10, 3) as u64;
    let (n, k, ell) = (12, 3, 3);
    let count = 1_000_000;
    let scheme = PartitionScheme::new(n, ell)?;
    let per_seed = (0..seeds)
        .map(|seed| -> Result<([f64; 4], [f64; 3])> {
            let model = gaussians::planted_gmm(n, k, 0.3, 4.0, (0.3, 0.6), seed)?;
            let cfg = GmmConfig { seed, ..GmmConfig::default() };
            let exact = match gaussians::learn(MomentSource::Exact(&model), k, &scheme, &cfg) {
                Ok(l) => {
                    let e = gaussians::evaluate(&l.model, &model)?;
                    let mw = &l.means_weights;
                    let ratio = e
                        .perm
                        .iter()
                        .enumerate()
                        .map(|(i, &p)| (mw.c_ell1[p] / mw.c_ell[p] - model.means().column(i).norm()).abs())
                        .fold(0.0, f64::max);
                    [e.max_mean_l2, e.max_weight_error, e.max_variance_rel, ratio]
                }
                Err(_) => [f64::INFINITY; 4],
            };
            let samples = gaussians::sample(&model, count, seed + 100)?;
            let sampled = gaussians::learn(MomentSource::Empirical(&samples), k, &scheme, &cfg)
                .and_then(|l| gaussians::evaluate(&l.model, &model))
                .map(|e| [e.max_mean_l2, e.max_weight_error, e.max_variance_rel])
                .unwrap_or([f64::INFINITY; 3]);
            Ok((exact, sampled))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut fp = Fingerprint::default();
    let mut exact = [0.0f64; 4];
    let mut cols = [Vec::new(), Vec::new(), Vec::new()];
    for (e, s) in &per_seed {
        fp.f64s(e);
        fp.f64s(s);
        for c in 0..4 {
            exact[c] = exact[c].max(e[c]);
        }
        for c in 0..3 {
            cols[c].push(s[c]);
        }
    }
    let med: Vec<f64> = cols.iter().map(|c| quantile(c, 0.5)).collect();
    let exact_ok = exact[..3].iter().all(|&x| x <= 1e-6) && exact[3] <= 1e-9;
    let sampled_ok = med[0] <= 0.05 && med[1] <= 0.02 && med[2] <= 0.1;
    Ok(Outcome::new(
        exact_ok && sampled_ok,
        format!(
            "exact means/weights/vars {:.1e}/{:.1e}/{:.1e}, ratio identity {:.1e}; sampled medians {:.3}/{:.3}/{:.3}",
            exact[0], exact[1], exact[2], exact[3], med[0], med[1], med[2]
        ),
        &[
            ("exact_means", exact[0]),
            ("exact_weights", exact[1]),
            ("exact_variances", exact[2]),
            ("ratio_identity", exact[3]),
            ("median_means_l2", med[0]),
            ("median_weights", med[1]),
            ("median_variances_rel", med[2]),
        ],
        fp,
    ))
}

/// Largest distance between unit eigenvectors of `m_hat` and the columns of
/// `u`, after pairing eigenvalues with `d` and aligning signs.
pub fn eigenvector_deviation(u: &Matrix, d: &[f64], m_hat: &Matrix) -> Result<f64> {
    let eig = eig_nonsymmetric(m_hat)?;
    let n = d.len();
    let cost = Matrix::from_fn(n, n, |i, j| (d[i] - eig.eigenvalues[j]).abs());
    let perm = min_cost_assignment(&cost)?;
    let mut worst: f64 = 0.0;
    for (i, &j) in perm.iter().enumerate() {
        let want = u.column(i).normalize();
        let got = eig.eigenvectors.column(j).normalize();
        let got = if got.dot(&want) < 0.0 { -got } else { got };
        worst = worst.max((got - want).norm());
    }
    Ok(worst)
}

fn perturbation_bound(_: Scale) -> Result<Outcome> {
    let scales = [1e-8, 1e-6, 1e-4];
    let seed = rng::derive_seed(SUITE_SEED, "c12", &[]);
    let mut fp = Fingerprint::default();
    let (mut checked, mut refused, mut violations) = (0, 0, 0);
    let mut tightest: f64 = 0.0;
    for i in 0..30u64 {
        let f_scale = scales[(i % 3) as usize];
        let n = uniform_int(seed, "c12-n", &[i], 3, 6);
        let u = conditioned_unit_columns(seed, "c12-u", n, 10.0)?;
        let mut g = rng::stream(seed, "c12-d", &[i]);
        let d: Vec<f64> = (0..n).map(|k| (k + 1) as f64 * (1.0 + 0.2 * rng::gaussian_vec(&mut g, 1)[0].tanh())).collect();
        let e = gaussian(seed, "c12-e", &[i], n, n) * (f_scale / n as f64);
        let f = gaussian(seed, "c12-f", &[i], n, n) * (f_scale / n as f64);
        let uinv = u.clone().try_inverse().ok_or(Error::Precondition("singular U".into()))?;
        let m = &u * Matrix::from_diagonal(&nalgebra::DVector::from_vec(d.clone())) * uinv;
        let m_hat = &m * (Matrix::identity(n, n) + &e) + &f;
        match eig_perturbation_bound(&u, &d, &e, &f) {
            Ok(bound) => {
                let dev = eigenvector_deviation(&u, &d, &m_hat)?;
                fp.f64s(&[bound, dev]);
                checked += 1;
                violations += usize::from(dev > bound);
                tightest = tightest.max(dev / bound);
            }
            Err(Error::Precondition(_)) => {
                fp.u64(u64::MAX);
                refused += 1;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(Outcome::new(
        violations == 0 && checked > 0,
        format!("{checked} checked, {refused} outside the precondition, {violations} violations, largest deviation/bound {tightest:.3}"),
        &[("checked", checked as f64), ("violations", violations as f64), ("max_ratio", tightest)],
        fp,
    ))
}

fn fmt_list(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:.2e}")).collect::<Vec<_>>().join(", ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_a_power_law() {
        let x = [1.0, 10.0, 100.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powi(2)).collect();
        assert!((log_log_slope(&x, &y) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn deviation_of_an_exact_matrix_is_rounding() {
        let u = Matrix::identity(3, 3);
        let m = Matrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0, 3.0]));
        assert!(eigenvector_deviation(&u, &[1.0, 2.0, 3.0], &m).unwrap() < 1e-14);
    }

    #[test]
    fn orthosys_instances_meet_the_preconditions() {
        for i in 0..200 {
            let (n, m, dim, r, s) = orthosys_instance(5, i);
            let delta = dim as f64 / (n * m) as f64;
            assert!(s as f64 <= delta * m as f64 / 2.0);
            assert!((r * s) as f64 <= delta * n as f64 / 3.0);
        }
    }

    #[test]
    fn fingerprints_see_every_bit() {
        let mut a = Fingerprint::default();
        a.f64(1.0);
        let mut b = Fingerprint::default();
        b.f64(1.0 + f64::EPSILON);
        assert_ne!(a.finish(), b.finish());
    }
}
