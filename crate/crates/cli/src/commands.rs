use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use overcomplete::decompose::{decompose_order3, decompose_overcomplete, DecomposeConfig};
use overcomplete::gaussians::{self, AxisAlignedGmm, GmmConfig, GmmFile, MomentSource, PartitionScheme};
use overcomplete::io::{read_tensor, write_factor_set};
use overcomplete::linalg::orthonormalize;
use overcomplete::multiview::{self, LearnConfig, ModelFile, MultiViewModel};
use overcomplete::planted::gaussian_matrix;
use overcomplete::rng;
use overcomplete::smoothed::{
    build_orthogonal_system, kr_sigma_min_sweep, verify_orthogonal_system, BaseFamily, OrthogonalSystem, SweepGrid,
};

use crate::repro::{self, Scale};
use crate::{
    CliError, Command, DecomposeArgs, GenArgs, GmmCommand, GmmLearnArgs, GmmPlantArgs, KrrankArgs, MultiviewCommand,
    MultiviewLearnArgs, MultiviewPlantArgs, OrthosysBuildArgs, OrthosysCommand, OrthosysVerifyArgs, ReproArgs,
    BUILD_ID,
};

type Result<T> = std::result::Result<T, CliError>;

/// `println!` that ignores a closed stdout, e.g. when piped into `head`.
macro_rules! say {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Decompose(a) => decompose(a),
        Command::Krrank(a) => krrank(a),
        Command::Orthosys(OrthosysCommand::Build(a)) => orthosys_build(a),
        Command::Orthosys(OrthosysCommand::Verify(a)) => orthosys_verify(a),
        Command::Multiview(MultiviewCommand::Plant(a)) => multiview_plant(a),
        Command::Multiview(MultiviewCommand::Gen(a)) => multiview_gen(a),
        Command::Multiview(MultiviewCommand::Learn(a)) => multiview_learn(a),
        Command::Gmm(GmmCommand::Plant(a)) => gmm_plant(a),
        Command::Gmm(GmmCommand::Gen(a)) => gmm_gen(a),
        Command::Gmm(GmmCommand::Learn(a)) => gmm_learn(a),
        Command::Repro(a) => repro_cmd(a),
    }
}

/// Provenance recorded in every output file.
#[derive(Debug, Serialize)]
struct RunInfo<'a> {
    command: &'a str,
    build: &'static str,
    seed: u64,
    config: Value,
}

impl<'a> RunInfo<'a> {
    fn new(command: &'a str, seed: u64, config: impl Serialize) -> Result<Self> {
        Ok(RunInfo { command, build: BUILD_ID, seed, config: serde_json::to_value(config)? })
    }

    fn comments(&self) -> Vec<String> {
        vec![
            format!("overcomplete {} {}", self.command, self.build),
            format!("seed {}", self.seed),
            format!("config {}", self.config),
        ]
    }
}

fn with_path(path: &Path, e: std::io::Error) -> CliError {
    std::io::Error::new(e.kind(), format!("{}: {e}", path.display())).into()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| with_path(path, e))?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| with_path(path, e))?))
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Serializes `body` (an object) with the run record under `"run"`.
fn with_run(body: impl Serialize, run: &RunInfo) -> Result<Value> {
    let mut v = serde_json::to_value(body)?;
    match v.as_object_mut() {
        Some(obj) => {
            obj.insert("run".into(), serde_json::to_value(run)?);
            Ok(v)
        }
        None => Ok(json!({ "run": run, "value": v })),
    }
}

fn decompose(a: DecomposeArgs) -> Result<()> {
    let t = read_tensor(open(&a.input)?)?;
    let mut cfg = DecomposeConfig::new(a.rank, a.seed);
    if let Some(f) = a.noise_floor {
        cfg.noise_floor = f;
    }
    if let Some(r) = a.max_retries {
        cfg.max_retries = r;
    }
    if let Some(c) = a.contractions {
        cfg.contractions = c;
    }
    if let Some(s) = a.refine_sweeps {
        cfg.refine_sweeps = s;
    }
    let run = RunInfo::new("decompose", a.seed, &cfg)?;
    let (factors, report) = match t.order() {
        3 => {
            let (fs, report) = decompose_order3(&t, &cfg)?;
            (fs, json!({ "condition": report }))
        }
        o if o > 3 => {
            let res = decompose_overcomplete(&t, &cfg)?;
            let report = json!({
                "condition": res.report,
                "split_residuals": res.split_residuals,
                "split_warnings": res.warnings,
            });
            (res.factors, report)
        }
        o => {
            return Err(overcomplete::Error::Shape(format!("decompose needs a tensor of order 3 or more, got {o}")).into())
        }
    };
    let mut w = create(&a.output)?;
    write_factor_set(&mut w, &factors, &run.comments())?;
    w.flush()?;
    if let Some(path) = &a.report {
        write_json(path, &with_run(report, &run)?)?;
    }
    Ok(())
}

fn krrank(a: KrrankArgs) -> Result<()> {
    let bases = a
        .base
        .iter()
        .map(|b| b.parse::<BaseFamily>())
        .collect::<overcomplete::Result<Vec<_>>>()?;
    let grid = SweepGrid {
        ns: a.n_list.clone(),
        ranks: a.r_list.clone(),
        orders: a.order.clone(),
        rhos: a.rho_list.clone(),
        bases,
        trials: a.trials,
        seed: a.seed,
        failure_threshold: a.failure_threshold,
    };
    let run = RunInfo::new("krrank", a.seed, json!({ "grid": &grid, "record_timing": a.record_timing }))?;
    let (results, records) = kr_sigma_min_sweep(&grid)?;
    let mut file = create(&a.out)?;
    for c in run.comments() {
        writeln!(file, "# {c}")?;
    }
    if a.record_timing {
        writeln!(file, "# wall_ms is measured time and differs between runs")?;
    }
    let mut w = csv::Writer::from_writer(file);
    for mut r in records {
        if !a.record_timing {
            r.wall_ms = 0.0;
        }
        w.serialize(r)?;
    }
    w.flush()?;
    say!("{:>5} {:>6} {:>4} {:>8} {:>6} {:>12} {:>12} {:>8}", "n", "R", "ell", "rho", "base", "min", "median", "failures");
    for p in &results {
        match &p.note {
            Some(note) => say!("{:>5} {:>6} {:>4} {:>8} {:>6} skipped: {note}", p.n, p.rank, p.ell, p.rho, p.base.name()),
            None => say!(
                "{:>5} {:>6} {:>4} {:>8} {:>6} {:>12.4e} {:>12.4e} {:>8}",
                p.n,
                p.rank,
                p.ell,
                p.rho,
                p.base.name(),
                p.min,
                p.median,
                p.failures
            ),
        }
    }
    if let Some(path) = &a.summary {
        let mut results = results;
        if !a.record_timing {
            results.iter_mut().for_each(|p| p.wall_ms = 0.0);
        }
        write_json(path, &json!({ "run": run, "points": results }))?;
    }
    Ok(())
}

fn orthosys_build(a: OrthosysBuildArgs) -> Result<()> {
    let rows = a.n * a.m;
    let basis = match (&a.basis, a.random_dim) {
        (Some(path), _) => read_tensor(open(path)?)?.to_matrix()?,
        (None, Some(d)) => {
            let g = gaussian_matrix(&mut rng::stream(a.seed, "orthosys-basis", &[]), rows, d);
            orthonormalize(&g, 1e-10)
        }
        (None, None) => return Err(CliError::Usage("give --basis or --random-dim".into())),
    };
    let build_seed = rng::derive_seed(a.seed, "orthosys-build", &[]);
    let sys = build_orthogonal_system(&basis, a.n, a.m, a.r, a.s, build_seed)?;
    let run = RunInfo::new(
        "orthosys build",
        a.seed,
        json!({ "n": a.n, "m": a.m, "r": a.r, "s": a.s, "basis": a.basis, "random_dim": a.random_dim }),
    )?;
    write_json(&a.out, &with_run(&sys, &run)?)
}

fn orthosys_verify(a: OrthosysVerifyArgs) -> Result<()> {
    let sys: OrthogonalSystem = serde_json::from_reader(open(&a.system)?)?;
    let v = verify_orthogonal_system(&sys);
    say!("{}", json!({ "ok": v.ok, "worst_residual": v.worst_residual, "theta": sys.theta }));
    if v.ok {
        Ok(())
    } else {
        Err(CliError::Failed(format!("residual {:e} is below theta {:e}", v.worst_residual, sys.theta)))
    }
}

fn read_multiview_model(path: &Path) -> Result<MultiViewModel> {
    let f: ModelFile = serde_json::from_reader(open(path)?)?;
    Ok(MultiViewModel::from_file(&f)?)
}

fn multiview_plant(a: MultiviewPlantArgs) -> Result<()> {
    let model = match a.anchor {
        Some(anchor) => multiview::separated_model(a.n, a.views, a.rank, a.alpha, anchor, a.seed)?,
        None => multiview::planted_model(a.n, a.views, a.rank, a.alpha, a.seed)?,
    };
    let run = RunInfo::new(
        "multiview plant",
        a.seed,
        json!({ "n": a.n, "views": a.views, "rank": a.rank, "alpha": a.alpha, "anchor": a.anchor }),
    )?;
    write_json(&a.out, &with_run(model.to_file(), &run)?)
}

fn multiview_gen(a: GenArgs) -> Result<()> {
    let model = read_multiview_model(&a.model)?;
    let samples = multiview::sample(&model, a.n_samples, a.seed)?;
    let run = RunInfo::new("multiview gen", a.seed, json!({ "model": a.model, "n_samples": a.n_samples }))?;
    let mut w = create(&a.out)?;
    multiview::write_samples(&mut w, &samples, &run.comments())?;
    w.flush()?;
    Ok(())
}

fn multiview_learn(a: MultiviewLearnArgs) -> Result<()> {
    let cfg = LearnConfig::new(a.rank, a.seed);
    let learned = match (&a.samples, &a.exact_model) {
        (Some(path), _) => {
            let samples = multiview::read_samples(open(path)?)?;
            if samples.ell() != a.views {
                return Err(overcomplete::Error::Shape(format!(
                    "samples have {} views, --views is {}",
                    samples.ell(),
                    a.views
                ))
                .into());
            }
            multiview::learn(&samples, &cfg)?
        }
        (None, Some(path)) => {
            let model = read_multiview_model(path)?;
            if model.ell() != a.views {
                return Err(overcomplete::Error::Shape(format!("model has {} views, --views is {}", model.ell(), a.views)).into());
            }
            multiview::learn_from_moment(&model.exact_moment()?, &cfg)?
        }
        (None, None) => return Err(CliError::Usage("give --samples or --exact-model".into())),
    };
    let evaluation = match &a.truth {
        Some(path) => Some(multiview::evaluate(&learned, &read_multiview_model(path)?)?),
        None => None,
    };
    let run = RunInfo::new(
        "multiview learn",
        a.seed,
        json!({ "samples": a.samples, "exact_model": a.exact_model, "learn": cfg }),
    )?;
    let mut out = with_run(learned.to_file(), &run)?;
    out["diagnostics"] = serde_json::to_value(&learned.diagnostics)?;
    if let Some(e) = evaluation {
        out["evaluation"] = serde_json::to_value(e)?;
    }
    write_json(&a.out, &out)
}

fn read_gmm(path: &Path) -> Result<AxisAlignedGmm> {
    let f: GmmFile = serde_json::from_reader(open(path)?)?;
    Ok(AxisAlignedGmm::from_file(&f)?)
}

fn gmm_plant(a: GmmPlantArgs) -> Result<()> {
    let model = gaussians::planted_gmm(a.n, a.k, a.rho, a.scale, (a.var_lo, a.var_hi), a.seed)?;
    let run = RunInfo::new(
        "gmm plant",
        a.seed,
        json!({ "n": a.n, "k": a.k, "rho": a.rho, "scale": a.scale, "variance_range": [a.var_lo, a.var_hi] }),
    )?;
    write_json(&a.out, &with_run(model.to_file(), &run)?)
}

fn gmm_gen(a: GenArgs) -> Result<()> {
    let model = read_gmm(&a.model)?;
    let samples = gaussians::sample(&model, a.n_samples, a.seed)?;
    let run = RunInfo::new("gmm gen", a.seed, json!({ "model": a.model, "n_samples": a.n_samples }))?;
    let mut w = create(&a.out)?;
    gaussians::write_samples(&mut w, &samples, &run.comments())?;
    w.flush()?;
    Ok(())
}

fn gmm_learn(a: GmmLearnArgs) -> Result<()> {
    let cfg = GmmConfig { seed: a.seed, ..GmmConfig::default() };
    let (samples, model) = match (&a.samples, &a.exact_model) {
        (Some(path), _) => (Some(gaussians::read_samples(open(path)?)?), None),
        (None, Some(path)) => (None, Some(read_gmm(path)?)),
        (None, None) => return Err(CliError::Usage("give --samples or --exact-model".into())),
    };
    let source = match (&samples, &model) {
        (Some(s), _) => MomentSource::Empirical(s),
        (None, Some(m)) => MomentSource::Exact(m),
        (None, None) => unreachable!(),
    };
    let scheme = PartitionScheme::new(source.n(), a.ell)?;
    let learned = gaussians::learn(source, a.k, &scheme, &cfg)?;
    let evaluation = match &a.truth {
        Some(path) => Some(gaussians::evaluate(&learned.model, &read_gmm(path)?)?),
        None => None,
    };
    let run = RunInfo::new(
        "gmm learn",
        a.seed,
        json!({ "samples": a.samples, "exact_model": a.exact_model, "ell": a.ell, "learn": cfg }),
    )?;
    let mut out = with_run(learned.model.to_file(), &run)?;
    out["diagnostics"] = json!({
        "means": learned.means_weights.diagnostics,
        "clamped_variances": learned.clamped_variances,
        "variance_condition": learned.variance_condition,
    });
    if let Some(e) = evaluation {
        out["evaluation"] = serde_json::to_value(e)?;
    }
    write_json(&a.out, &out)
}

fn repro_cmd(a: ReproArgs) -> Result<()> {
    let scale = if a.quick { Scale::Quick } else { Scale::Full };
    if let Some(&bad) = a.only.iter().find(|&&id| !(1..repro::CRITERIA).contains(&id)) {
        return Err(CliError::Usage(format!("--only takes criteria 1 to {}, got {bad}", repro::CRITERIA - 1)));
    }
    let report = if a.only.is_empty() {
        repro::run_suite(scale, |r| say!("{}", r.line()))
    } else {
        let criteria: Vec<_> = a
            .only
            .iter()
            .map(|&id| {
                let r = repro::run_criterion(id, scale);
                say!("{}", r.line());
                r
            })
            .collect();
        repro::SuiteReport { scale, build: BUILD_ID.to_string(), passed: criteria.iter().all(|c| c.passed), criteria }
    };
    let failed: Vec<usize> = report.criteria.iter().filter(|c| !c.passed).map(|c| c.id).collect();
    say!(
        "{} of {} criteria passed",
        report.criteria.len() - failed.len(),
        report.criteria.len()
    );
    if let Some(path) = &a.out {
        write_json(path, &serde_json::to_value(&report)?)?;
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!("criteria {failed:?} failed")))
    }
}
