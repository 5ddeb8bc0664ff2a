//! Config-driven front end for the `multising` toolkit.
//!
//! [`run`] loads an [`AnalysisConfig`], runs one command and writes
//! `report.json` plus CSV series into the output directory. The binary maps
//! the outcome to exit codes 0 (all requested verdicts pass), 1 (some fail)
//! and 2 (error).

pub mod config;
pub mod report;

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, ValueEnum};
use log::info;
use multising::chain::{build_box_graph, chain_classes, class_centers_csv, class_lambda, BoxGraphOptions};
use multising::field::{Vector, VectorFieldSpec};
use multising::singularity::{find_singularities, LambdaSample, Provenance, SingularityInfo, SingularitySearch};
use multising::splitting::{lyapunov_exponents, LyapunovSpectrum};
use multising::verdict::{
    check_bdl_multi_singular, check_multi_singular, check_singular_domination, check_uniform_and_singular, grid_search,
    robustness_probe, theorem_c_crosscheck, CheckOptions, Evidence, RobustnessReport, TheoremCReport, Verdict,
};
use serde::Serialize;

pub use config::{AnalysisConfig, CheckConfig, CheckKind, ConfigError, LambdaKind};
use report::{num, Report, Series, SCHEMA_VERSION, TOOL};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Singularities,
    Lyapunov,
    Domination,
    ChainClasses,
    Verdicts,
    Probe,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Singularities => "singularities",
            Command::Lyapunov => "lyapunov",
            Command::Domination => "domination",
            Command::ChainClasses => "chain-classes",
            Command::Verdicts => "verdicts",
            Command::Probe => "probe",
        }
    }
}

#[derive(Clone, Debug, Parser)]
#[command(name = "multising", version, about = "Singular domination and multi-singular hyperbolicity verdicts")]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Output directory; overrides `output` in the config.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Overrides `seed` in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for the parallel sections.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Vacuous passes become failures.
    #[arg(long)]
    pub strict_vacuous: bool,
}

#[derive(Debug)]
pub enum Failure {
    Config(ConfigError),
    Runtime(anyhow::Error),
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(e) => write!(f, "{e}"),
            Failure::Runtime(e) => write!(f, "error: {e:#}"),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

/// Exit code for an outcome of [`run`].
pub fn exit_code(outcome: &Result<bool, Failure>) -> u8 {
    match outcome {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(_) => 2,
    }
}

/// Runs one command. `Ok(all_pass)` once the report is written.
pub fn run(cli: &Cli) -> Result<bool, Failure> {
    let mut cfg = AnalysisConfig::load(&cli.config)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.strict_vacuous |= cli.strict_vacuous;
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .ok_or_else(|| anyhow!("no output directory: pass --out or set output in the config"))?;
    let job = || run_command(cli.command, &cfg, &out);
    match cli.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .context("building the thread pool")?;
            pool.install(job)
        }
        None => job(),
    }
}

fn run_command(command: Command, cfg: &AnalysisConfig, out: &Path) -> Result<bool, Failure> {
    let spec = cfg.spec()?;
    let started = Instant::now();
    info!("{} on {spec}", command.name());
    let mut files = Vec::new();
    let (all_pass, results) = match command {
        Command::Singularities => singularities(cfg, &spec)?,
        Command::Lyapunov => lyapunov(cfg, &spec, &mut files)?,
        Command::Domination => domination(cfg, &spec, &mut files)?,
        Command::ChainClasses => chain(cfg, &spec, &mut files)?,
        Command::Verdicts => verdicts(cfg, &spec, &mut files)?,
        Command::Probe => probe(cfg, &spec)?,
    };
    let report = Report {
        schema_version: SCHEMA_VERSION,
        tool: TOOL,
        command: command.name(),
        all_pass,
        effective_config: cfg,
        results,
    };
    let json = report::to_json(&report).context("serializing the report")?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for (name, series) in &files {
        series.write(&out.join(name)).with_context(|| format!("writing {name}"))?;
    }
    std::fs::write(out.join("effective-config.toml"), cfg.to_toml()).context("writing effective-config.toml")?;
    std::fs::write(out.join("report.json"), json).context("writing report.json")?;
    info!("{} finished in {:.2?}, all pass: {all_pass}", command.name(), started.elapsed());
    Ok(all_pass)
}

type Files = Vec<(String, Series)>;

fn missing(pointer: &str, what: &str) -> Failure {
    Failure::Config(ConfigError {
        pointer: pointer.into(),
        message: format!("this command needs {what}"),
    })
}

fn zeros_of(cfg: &AnalysisConfig, spec: &VectorFieldSpec) -> anyhow::Result<SingularitySearch> {
    find_singularities(spec, spec.region(), cfg.singularities.density).context("singularity search")
}

fn singularities(cfg: &AnalysisConfig, spec: &VectorFieldSpec) -> Result<(bool, serde_json::Value), Failure> {
    let search = zeros_of(cfg, spec)?;
    Ok((true, serde_json::to_value(&search).map_err(anyhow::Error::from)?))
}

#[derive(Serialize)]
struct LyapunovResult {
    x0: Vec<f64>,
    t_total: f64,
    spectrum: LyapunovSpectrum,
    sum: f64,
}

fn lyapunov(cfg: &AnalysisConfig, spec: &VectorFieldSpec, files: &mut Files) -> Result<(bool, serde_json::Value), Failure> {
    let l = cfg.lyapunov.as_ref().ok_or_else(|| missing("/lyapunov", "a [lyapunov] table"))?;
    let x0 = match (&l.x0, &cfg.orbit) {
        (Some(x), _) => x.clone(),
        (None, Some(o)) => o.x0.clone(),
        (None, None) => spec.region().center().iter().copied().collect(),
    };
    if x0.len() != spec.dim() {
        return Err(Failure::Config(ConfigError {
            pointer: "/lyapunov/x0".into(),
            message: format!("expected {} coordinates", spec.dim()),
        }));
    }
    let spectrum = lyapunov_exponents(spec, &Vector::from_vec(x0.clone()), l.t_total, l.dt, l.tol)
        .context("Lyapunov exponents")?;
    let mut series = Series::new(std::iter::once("t".to_string()).chain((0..spec.dim()).map(|k| format!("exponent_{k}"))));
    for (t, est) in &spectrum.history {
        series.push(std::iter::once(num(*t)).chain(est.iter().map(|v| num(*v))).collect());
    }
    files.push(("exponents.csv".into(), series));
    let sum = spectrum.exponents.iter().sum();
    let res = LyapunovResult {
        x0,
        t_total: l.t_total,
        spectrum,
        sum,
    };
    Ok((true, serde_json::to_value(&res).map_err(anyhow::Error::from)?))
}

/// Report view of a `Λ` sample.
#[derive(Serialize)]
struct LambdaSummary {
    provenance: Provenance,
    points: usize,
    slack: f64,
    singularities: Vec<SingularityInfo>,
}

impl LambdaSummary {
    fn of(l: &LambdaSample) -> Self {
        LambdaSummary {
            provenance: l.provenance.clone(),
            points: l.points.len(),
            slack: l.slack,
            singularities: l.singularities.clone(),
        }
    }
}

fn read_points(path: &Path, dim: usize) -> anyhow::Result<Vec<Vector>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let mut points = Vec::new();
    for (n, rec) in r.records().enumerate() {
        let rec = rec?;
        let p = rec
            .iter()
            .map(|c| c.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .with_context(|| format!("{} row {}", path.display(), n + 2))?;
        if p.len() != dim {
            bail!("{} row {}: expected {dim} coordinates, found {}", path.display(), n + 2, p.len());
        }
        points.push(Vector::from_vec(p));
    }
    Ok(points)
}

/// Builds `Λ` for `spec` from the configured provenance.
pub fn build_lambda(cfg: &AnalysisConfig, spec: &VectorFieldSpec) -> Result<(LambdaSample, Vec<SingularityInfo>), Failure> {
    let l = cfg.lambda.as_ref().ok_or_else(|| missing("/lambda", "a [lambda] table"))?;
    let zeros = zeros_of(cfg, spec)?.singularities;
    let lambda = match l.provenance {
        LambdaKind::OrbitClosure => {
            let o = cfg.orbit.as_ref().expect("checked at load");
            LambdaSample::from_orbit(
                spec,
                &Vector::from_vec(o.x0.clone()),
                o.t_total,
                o.dt,
                o.tol,
                o.transient,
                &zeros,
                l.capture,
            )
            .context("orbit-closure Λ")?
        }
        LambdaKind::UnstableBranch => {
            let o = cfg.orbit.as_ref().expect("checked at load");
            let near = Vector::from_vec(l.sigma.clone().expect("filled at load"));
            let sigma = zeros
                .iter()
                .min_by(|a, b| (&a.location - &near).norm().total_cmp(&(&b.location - &near).norm()))
                .ok_or_else(|| anyhow!("unstable-branch Λ: the field has no zero in the region"))?;
            LambdaSample::from_unstable_branch(
                spec,
                sigma,
                l.offset.expect("filled at load"),
                o.t_total,
                o.dt,
                o.tol,
                o.transient,
                &zeros,
                l.capture,
            )
            .context("unstable-branch Λ")?
        }
        LambdaKind::BoxClass => {
            let graph = build_box_graph(spec, spec.region(), &box_options(cfg)).context("box graph")?;
            let classes = chain_classes(&graph);
            class_lambda(&graph, &classes, l.class.expect("filled at load"), &zeros).context("box-class Λ")?
        }
        LambdaKind::PointList => {
            let path = l.file.as_ref().expect("checked at load");
            let points = read_points(path, spec.dim())?;
            let sings = zeros
                .iter()
                .filter(|z| points.iter().any(|p| (p - &z.location).norm() <= l.capture))
                .cloned()
                .collect();
            LambdaSample::from_points(points, sings, l.slack.expect("filled at load"))
        }
    };
    if lambda.is_empty() {
        return Err(anyhow!("Λ sample is empty").into());
    }
    info!(
        "Λ: {} points, {} singularities",
        lambda.points.len(),
        lambda.singularities.len()
    );
    Ok((lambda, zeros))
}

fn box_options(cfg: &AnalysisConfig) -> BoxGraphOptions {
    BoxGraphOptions {
        resolution: cfg.chain.resolution,
        eps: cfg.chain.eps,
        t_edge: cfg.chain.t_edge,
        jitter: cfg.chain.jitter,
        seed: cfg.seed,
        tol: cfg.chain.tol,
    }
}

struct Knobs {
    t_max: Option<f64>,
    window: f64,
    stride: usize,
    segment_time: f64,
}

fn options(cfg: &AnalysisConfig, k: &Knobs, zeros: &[SingularityInfo], eta: f64, t: f64) -> CheckOptions {
    let mut o = CheckOptions::new(eta, t);
    o.t_max = k.t_max;
    o.window = k.window;
    o.stride = k.stride;
    o.segment_time = k.segment_time;
    if let Some(orb) = &cfg.orbit {
        o.tol = orb.tol;
        o.dt = orb.dt;
    }
    o.escape.tol = o.tol;
    o.escape.other_zeros = zeros.iter().map(|z| z.location.clone()).collect();
    o.strict_vacuous = cfg.strict_vacuous;
    o.seed = cfg.seed;
    o
}

fn check_options(cfg: &AnalysisConfig, c: &CheckConfig, zeros: &[SingularityInfo], eta: f64, t: f64) -> CheckOptions {
    let knobs = Knobs {
        t_max: c.t_max,
        window: c.window,
        stride: c.stride,
        segment_time: c.segment_time,
    };
    let mut o = options(cfg, &knobs, zeros, eta, t);
    o.cone_alpha = c.cone_alpha;
    o.center_grid = c.center_grid;
    o.indices = c.indices.clone();
    o
}

fn domination_rows(series: &mut Series, prefix: &[String], v: &Verdict) {
    for e in &v.evidence {
        if let Evidence::Domination { label, certificate } = e {
            for (t, r) in &certificate.per_t {
                let mut row = prefix.to_vec();
                row.extend([num(certificate.eta), num(certificate.t_min), label.clone(), num(*t), num(*r)]);
                series.push(row);
            }
        }
    }
}

fn orbit_series(lambda: &LambdaSample) -> Option<Series> {
    let orbit = lambda.orbit.as_ref()?;
    let mut s = Series::new(std::iter::once("t".to_string()).chain((0..orbit.dim()).map(|k| format!("x{k}"))));
    for (t, x) in orbit.times().iter().zip(orbit.states()) {
        s.push(std::iter::once(num(*t)).chain(x.iter().map(|v| num(*v))).collect());
    }
    Some(s)
}

#[derive(Serialize)]
struct DominationResult {
    lambda: LambdaSummary,
    runs: Vec<Verdict>,
}

fn domination(cfg: &AnalysisConfig, spec: &VectorFieldSpec, files: &mut Files) -> Result<(bool, serde_json::Value), Failure> {
    let d = cfg.domination.as_ref().ok_or_else(|| missing("/domination", "a [domination] table"))?;
    let (lambda, zeros) = build_lambda(cfg, spec)?;
    let knobs = Knobs {
        t_max: d.t_max,
        window: d.window,
        stride: d.stride,
        segment_time: d.segment_time,
    };
    let mut series = Series::new(["eta", "T", "label", "t", "log_ratio"]);
    let mut runs = Vec::new();
    for &(eta, t) in &d.grid {
        let v = check_singular_domination(spec, &lambda, d.index, &options(cfg, &knobs, &zeros, eta, t))
            .context("singular domination")?;
        domination_rows(&mut series, &[], &v);
        runs.push(v);
    }
    if let Some(s) = orbit_series(&lambda) {
        files.push(("orbit.csv".into(), s));
    }
    files.push(("domination.csv".into(), series));
    let pass = runs.iter().any(|v| v.pass);
    let res = DominationResult {
        lambda: LambdaSummary::of(&lambda),
        runs,
    };
    Ok((pass, serde_json::to_value(&res).map_err(anyhow::Error::from)?))
}

#[derive(Serialize)]
struct ClassSummary {
    size: usize,
    file: String,
    lower: Vec<f64>,
    upper: Vec<f64>,
    /// Zeros of the field lying in a box of the class.
    zeros: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct ChainResult {
    resolution: usize,
    eps: f64,
    t_edge: f64,
    boxes: usize,
    edges: usize,
    dropped: usize,
    classes: Vec<ClassSummary>,
}

fn chain(cfg: &AnalysisConfig, spec: &VectorFieldSpec, files: &mut Files) -> Result<(bool, serde_json::Value), Failure> {
    let graph = build_box_graph(spec, spec.region(), &box_options(cfg)).context("box graph")?;
    let classes = chain_classes(&graph);
    let zeros = zeros_of(cfg, spec)?.singularities;
    let mut summaries = Vec::new();
    for (k, class) in classes.iter().enumerate() {
        let file = format!("class-{k}.csv");
        let text = class_centers_csv(&graph, class);
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let mut s = Series::new(rdr.headers().map_err(anyhow::Error::from)?.iter().map(String::from).collect::<Vec<_>>());
        for rec in rdr.records() {
            s.push(rec.map_err(anyhow::Error::from)?.iter().map(String::from).collect());
        }
        files.push((file.clone(), s));
        let d = spec.dim();
        let mut lower = vec![f64::INFINITY; d];
        let mut upper = vec![f64::NEG_INFINITY; d];
        for &b in class {
            let (lo, hi) = graph.bounds(b);
            for j in 0..d {
                lower[j] = lower[j].min(lo[j]);
                upper[j] = upper[j].max(hi[j]);
            }
        }
        let zs = zeros
            .iter()
            .filter(|z| graph.locate(&z.location).is_some_and(|b| class.binary_search(&b).is_ok()))
            .map(|z| z.location.iter().copied().collect())
            .collect();
        summaries.push(ClassSummary {
            size: class.len(),
            file,
            lower,
            upper,
            zeros: zs,
        });
    }
    let res = ChainResult {
        resolution: graph.resolution(),
        eps: graph.eps(),
        t_edge: graph.t_edge(),
        boxes: graph.box_count(),
        edges: graph.edge_count(),
        dropped: graph.dropped,
        classes: summaries,
    };
    Ok((true, serde_json::to_value(&res).map_err(anyhow::Error::from)?))
}

fn index_candidates(c: &CheckConfig, d: usize) -> Vec<usize> {
    c.indices.clone().unwrap_or_else(|| (1..d.saturating_sub(1)).collect())
}

/// First passing verdict over the index candidates (outer) and the grid
/// (inner), or the last one tried.
fn over_indices<F>(c: &CheckConfig, d: usize, run: F) -> multising::Result<Verdict>
where
    F: Fn(usize, f64, f64) -> multising::Result<Verdict>,
{
    let mut last = None;
    for i in index_candidates(c, d) {
        let v = grid_search(&c.grid, |eta, t| run(i, eta, t))?;
        if v.pass {
            return Ok(v);
        }
        last = Some(v);
    }
    last.ok_or_else(|| multising::Error::Precondition("no index candidates".into()))
}

/// Runs one verdict check on `Λ`.
pub fn run_check(
    cfg: &AnalysisConfig,
    c: &CheckConfig,
    spec: &VectorFieldSpec,
    lambda: &LambdaSample,
    zeros: &[SingularityInfo],
) -> multising::Result<Verdict> {
    let opts = |eta, t| check_options(cfg, c, zeros, eta, t);
    let d = spec.dim();
    match c.notion {
        CheckKind::SingularDomination => {
            over_indices(c, d, |i, eta, t| check_singular_domination(spec, lambda, i, &opts(eta, t)))
        }
        CheckKind::MultiSingular => grid_search(&c.grid, |eta, t| check_multi_singular(spec, lambda, c.v_radius, &opts(eta, t))),
        CheckKind::Uniform => grid_search(&c.grid, |eta, t| Ok(check_uniform_and_singular(spec, lambda, &opts(eta, t))?.0)),
        CheckKind::SingularHyperbolic => {
            grid_search(&c.grid, |eta, t| Ok(check_uniform_and_singular(spec, lambda, &opts(eta, t))?.1))
        }
        CheckKind::BdlMultiSingular => over_indices(c, d, |i, eta, t| {
            check_bdl_multi_singular(spec, lambda, i, c.bump_radii, &opts(eta, t))
        }),
        CheckKind::TheoremC => Err(multising::Error::Precondition("theorem-c is a cross-check, not a verdict".into())),
    }
}

#[derive(Serialize)]
#[serde(untagged)]
enum CheckOutcome {
    Verdict(Verdict),
    Crosscheck(TheoremCReport),
}

#[derive(Serialize)]
struct CheckEntry {
    notion: &'static str,
    pass: bool,
    outcome: CheckOutcome,
}

#[derive(Serialize)]
struct VerdictsResult {
    lambda: LambdaSummary,
    checks: Vec<CheckEntry>,
}

fn verdicts(cfg: &AnalysisConfig, spec: &VectorFieldSpec, files: &mut Files) -> Result<(bool, serde_json::Value), Failure> {
    if cfg.checks.is_empty() {
        return Err(missing("/checks", "at least one [[checks]] entry"));
    }
    let (lambda, zeros) = build_lambda(cfg, spec)?;
    let mut series = Series::new(["check", "eta", "T", "label", "t", "log_ratio"]);
    let mut entries = Vec::new();
    for c in &cfg.checks {
        let started = Instant::now();
        let entry = if c.notion == CheckKind::TheoremC {
            let (eta, t) = c.grid[0];
            let rep = theorem_c_crosscheck(spec, &lambda, c.v_radius, &check_options(cfg, c, &zeros, eta, t))
                .context("theorem-c")?;
            let pass = rep.item1_consistent != Some(false) && rep.item2_consistent != Some(false);
            CheckEntry {
                notion: c.notion.name(),
                pass,
                outcome: CheckOutcome::Crosscheck(rep),
            }
        } else {
            let v = run_check(cfg, c, spec, &lambda, &zeros).with_context(|| c.notion.name().to_string())?;
            domination_rows(&mut series, &[c.notion.name().to_string()], &v);
            CheckEntry {
                notion: c.notion.name(),
                pass: v.pass,
                outcome: CheckOutcome::Verdict(v),
            }
        };
        info!("{}: pass {} ({:.2?})", entry.notion, entry.pass, started.elapsed());
        entries.push(entry);
    }
    if let Some(s) = orbit_series(&lambda) {
        files.push(("orbit.csv".into(), s));
    }
    files.push(("domination.csv".into(), series));
    let pass = entries.iter().all(|e| e.pass);
    let res = VerdictsResult {
        lambda: LambdaSummary::of(&lambda),
        checks: entries,
    };
    Ok((pass, serde_json::to_value(&res).map_err(anyhow::Error::from)?))
}

#[derive(Serialize)]
struct ProbeResult {
    notion: &'static str,
    base: Verdict,
    robustness: Option<RobustnessReport>,
    min_margin_fraction: f64,
    pass: bool,
}

fn probe(cfg: &AnalysisConfig, spec: &VectorFieldSpec) -> Result<(bool, serde_json::Value), Failure> {
    let p = cfg.probe.as_ref().ok_or_else(|| missing("/probe", "a [probe] table"))?;
    let c = cfg.checks.iter().find(|c| c.notion == p.check).expect("checked at load");
    let (lambda, zeros) = build_lambda(cfg, spec)?;
    let base = run_check(cfg, c, spec, &lambda, &zeros).context("base verdict")?;
    let robustness = if base.pass {
        // Trials rerun the check at the base constants only.
        let mut fixed = c.clone();
        fixed.grid = vec![(base.eta.unwrap(), base.t_min.unwrap())];
        if let Some(i) = base.index {
            fixed.indices = Some(vec![i]);
        }
        Some(robustness_probe(spec, &base, p.delta, p.trials, cfg.seed, |f| {
            let (lam, zs) = build_lambda(cfg, f).map_err(|e| multising::Error::Precondition(e.to_string()))?;
            run_check(cfg, &fixed, f, &lam, &zs)
        }))
    } else {
        None
    };
    let pass = robustness.as_ref().is_some_and(|r| {
        r.passes == r.trials && r.worst_margin_fraction.is_some_and(|f| f >= p.min_margin_fraction)
    });
    let res = ProbeResult {
        notion: p.check.name(),
        base,
        robustness,
        min_margin_fraction: p.min_margin_fraction,
        pass,
    };
    Ok((pass, serde_json::to_value(&res).map_err(anyhow::Error::from)?))
}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
mod cli_chapter {}
