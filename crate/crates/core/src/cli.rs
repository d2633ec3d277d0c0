//! Command-line front end: `design`, `perf` and `report`.
//!
//! Settings resolve as command-line flag, then config file, then built-in
//! default. Each command writes a `manifest.toml` next to its artifacts; the
//! manifest is itself a valid config file, so `--config manifest.toml`
//! replays the run.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acquisition::{AcquisitionKind, AcquisitionSpec, HybridOrder, LiarRule};
use crate::engine::{run_design, ClockMode, CompletionOrder, DesignTrace, EngineConfig, Seeds};
use crate::metrics::{self, MadReference, MetricSeries};
use crate::perf::{run_scenario, AcqTimeKind, AcqTimeModel, PerfScenario, ProgressCurve, RunTimeModel};
use crate::problem::{CalibrationProblem, ParameterSpace};
use crate::stats::median;
use crate::testbed::{self, TestProblem};
use crate::trace_io::{self, Header, TraceKind};
use crate::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
pub const OUT_ENV: &str = "PARCAL_OUT";
pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Parser)]
#[command(name = "parcal", version, about = "Sequential calibration designs and their parallel performance")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the sequential design loop on a test problem.
    Design(DesignArgs),
    /// Simulate wall-clock performance over a grid of batch and worker sizes.
    Perf(PerfArgs),
    /// Aggregate traces into series, a summary table and a plotting script.
    Report(ReportArgs),
}

#[derive(Debug, Args, Default)]
pub struct DesignArgs {
    /// Config file with a [design] section (and optional [problem]).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub problem: Option<String>,
    /// pi, ei, eivar, hybrid or rnd.
    #[arg(long)]
    pub acq: Option<String>,
    /// Evaluations after the initial design.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub n0: Option<usize>,
    #[arg(long)]
    pub b: Option<usize>,
    #[arg(long)]
    pub w: Option<usize>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub candidates: Option<usize>,
    #[arg(long = "ref-size")]
    pub ref_size: Option<usize>,
    /// mean, min or max.
    #[arg(long)]
    pub liar: Option<String>,
    /// eivar-even or eivar-odd.
    #[arg(long = "hybrid-order")]
    pub hybrid_order: Option<String>,
    /// earliest or submission.
    #[arg(long)]
    pub order: Option<String>,
    /// logical or wall.
    #[arg(long)]
    pub clock: Option<String>,
    /// Track MAD against the exact posterior at every stage.
    #[arg(long)]
    pub mad: Option<bool>,
    #[arg(long = "mad-grid")]
    pub mad_grid: Option<usize>,
    #[arg(long = "refit-every")]
    pub refit_every: Option<usize>,
    /// Output directory (default: $PARCAL_OUT/design or parcal-out/design).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replicates run concurrently.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct PerfArgs {
    /// Config file with a [perf] section.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Batch sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub b: Option<Vec<usize>>,
    /// Worker counts, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub w: Option<Vec<usize>>,
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long = "curve-n")]
    pub curve_n: Option<usize>,
    /// One exponent, or one per batch size. Defaults to 0.10,0.20,0.25 for the
    /// default batch sizes and to 0.10 otherwise.
    #[arg(long, value_delimiter = ',')]
    pub exponent: Option<Vec<f64>>,
    #[arg(long)]
    pub piecewise: Option<bool>,
    /// constant, linear or quadratic.
    #[arg(long = "acq-kind")]
    pub acq_kind: Option<String>,
    #[arg(long = "acq-a")]
    pub acq_a: Option<f64>,
    #[arg(long = "acq-b")]
    pub acq_b: Option<f64>,
    #[arg(long = "acq-c")]
    pub acq_c: Option<f64>,
    #[arg(long = "acq-tail")]
    pub acq_tail: Option<f64>,
    /// constant or truncated-normal.
    #[arg(long = "run-kind")]
    pub run_kind: Option<String>,
    #[arg(long = "run-mean")]
    pub run_mean: Option<f64>,
    #[arg(long = "run-std")]
    pub run_std: Option<f64>,
    #[arg(long = "run-floor")]
    pub run_floor: Option<f64>,
    /// Replay measured acquisition times from design traces under this directory.
    #[arg(long = "from-trace")]
    pub from_trace: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct ReportArgs {
    /// Trace directories (searched recursively).
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker count used as the speedup baseline (default: smallest per batch size).
    #[arg(long = "baseline-w")]
    pub baseline_w: Option<usize>,
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        CliError { code: EXIT_CONFIG, message: message.into() }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidArgument(_)
            | Error::DimensionMismatch { .. }
            | Error::UnknownProblem(_)
            | Error::InfeasibleTarget { .. }
            | Error::MissingBaseline(_)
            | Error::Schema { .. }
            | Error::Config(_) => EXIT_CONFIG,
            _ => EXIT_RUNTIME,
        };
        CliError { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError { code: EXIT_RUNTIME, message: e.to_string() }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let outcome = match cli.command {
        Command::Design(a) => cmd_design(&a).map(|p| println!("design artifacts in {}", p.display())),
        Command::Perf(a) => cmd_perf(&a).map(|p| println!("perf artifacts in {}", p.display())),
        Command::Report(a) => cmd_report(&a).map(|p| println!("report written to {}", p.display())),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

// ---------------------------------------------------------------------------
// Config files

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(rename = "run")]
    _run: Option<toml::Table>,
    design: Option<DesignFile>,
    problem: Option<ProblemSettings>,
    perf: Option<PerfFile>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct DesignFile {
    problem: Option<String>,
    acq: Option<String>,
    n: Option<usize>,
    n0: Option<usize>,
    b: Option<usize>,
    w: Option<usize>,
    replicates: Option<usize>,
    seed: Option<u64>,
    candidates: Option<usize>,
    ref_size: Option<usize>,
    liar: Option<String>,
    hybrid_order: Option<String>,
    order: Option<String>,
    clock: Option<String>,
    mad: Option<bool>,
    mad_grid: Option<usize>,
    refit_every: Option<usize>,
}

/// Overrides for the named test problem.
#[derive(Debug, Default, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSettings {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lower: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub upper: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PerfFile {
    alpha: Option<f64>,
    replicates: Option<usize>,
    seed: Option<u64>,
    b: Option<Vec<usize>>,
    w: Option<Vec<usize>>,
    label: Option<String>,
    baseline_w: Option<usize>,
    curve: Option<CurveFile>,
    acq_time: Option<AcqFile>,
    run_time: Option<RunFile>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CurveFile {
    kind: Option<String>,
    n: Option<usize>,
    exponent: Option<OneOrMany>,
    piecewise: Option<bool>,
    table: Option<Vec<(usize, f64)>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct AcqFile {
    kind: Option<String>,
    a: Option<f64>,
    b: Option<f64>,
    c: Option<f64>,
    tail: Option<f64>,
    values: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunFile {
    kind: Option<String>,
    mean: Option<f64>,
    std: Option<f64>,
    floor: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl OneOrMany {
    fn to_vec(&self) -> Vec<f64> {
        match self {
            OneOrMany::One(x) => vec![*x],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

/// Config file text, kept for line-precise error messages.
struct Source {
    path: Option<PathBuf>,
    text: String,
}

impl Source {
    fn load(path: Option<&Path>) -> CliResult<(Self, FileConfig)> {
        let Some(path) = path else {
            return Ok((Source { path: None, text: String::new() }, FileConfig::default()));
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let parsed: FileConfig = toml::from_str(&text)
            .map_err(|e| CliError::config(format!("{}: {}", path.display(), e.to_string().trim_end())))?;
        Ok((Source { path: Some(path.to_path_buf()), text }, parsed))
    }

    /// 1-based line of `key = ...` inside `[section]`.
    fn line_of(&self, section: &str, key: &str) -> Option<usize> {
        let mut current = String::new();
        for (i, raw) in self.text.lines().enumerate() {
            let line = raw.trim();
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                current = name.trim().to_string();
            } else if current == section {
                if let Some((k, _)) = line.split_once('=') {
                    if k.trim() == key {
                        return Some(i + 1);
                    }
                }
            }
        }
        None
    }
}

/// Where a resolved value came from.
#[derive(Clone, Copy)]
enum Origin {
    Flag(&'static str),
    File(&'static str, &'static str),
    Default,
}

fn pick<T>(flag: Option<T>, file: Option<T>, default: T, flag_name: &'static str, section: &'static str, key: &'static str) -> (T, Origin) {
    match (flag, file) {
        (Some(v), _) => (v, Origin::Flag(flag_name)),
        (None, Some(v)) => (v, Origin::File(section, key)),
        (None, None) => (default, Origin::Default),
    }
}

fn located(src: &Source, origin: Origin, msg: impl std::fmt::Display) -> CliError {
    let message = match origin {
        Origin::Flag(name) => format!("--{name}: {msg}"),
        Origin::File(section, key) => match (&src.path, src.line_of(section, key)) {
            (Some(p), Some(line)) => format!("{}:{line}: [{section}] {key}: {msg}", p.display()),
            (Some(p), None) => format!("{}: [{section}] {key}: {msg}", p.display()),
            (None, _) => format!("[{section}] {key}: {msg}"),
        },
        Origin::Default => msg.to_string(),
    };
    CliError::config(message)
}

fn parse_with<T: std::str::FromStr>(src: &Source, (raw, origin): (String, Origin)) -> CliResult<T>
where
    T::Err: std::fmt::Display,
{
    raw.parse().map_err(|e| located(src, origin, e))
}

fn timestamp() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn output_root() -> PathBuf {
    std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from("parcal-out"), PathBuf::from)
}

fn thread_pool(jobs: Option<usize>) -> CliResult<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        if j == 0 {
            return Err(CliError::config("--jobs: must be at least 1"));
        }
        builder = builder.num_threads(j);
    }
    builder.build().map_err(|e| CliError { code: EXIT_RUNTIME, message: e.to_string() })
}

fn check_seed(src: &Source, (seed, origin): (u64, Origin)) -> CliResult<u64> {
    if seed > i64::MAX as u64 {
        return Err(located(src, origin, format!("seed must be at most {}", i64::MAX)));
    }
    Ok(seed)
}

#[derive(Debug, Serialize)]
struct RunInfo {
    command: String,
    version: String,
    status: String,
    started: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    finished: Option<u64>,
    seeds: BTreeMap<String, String>,
    artifacts: Vec<String>,
}

fn write_manifest<S: Serialize>(dir: &Path, run: &RunInfo, body: &S) -> CliResult<()> {
    let mut text = String::from("# Replay with: parcal ");
    text.push_str(&run.command);
    text.push_str(" --config manifest.toml\n");
    let mut doc = toml::Table::new();
    doc.insert("run".into(), toml::Value::try_from(run).map_err(|e| CliError::config(e.to_string()))?);
    let body = toml::Value::try_from(body).map_err(|e| CliError::config(e.to_string()))?;
    if let toml::Value::Table(t) = body {
        doc.extend(t);
    }
    text.push_str(&toml::to_string_pretty(&doc).map_err(|e| CliError::config(e.to_string()))?);
    fs::write(dir.join(MANIFEST_FILE), text)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// design

/// Fully resolved design settings, as recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignSettings {
    pub problem: String,
    pub acq: String,
    pub n: usize,
    pub n0: usize,
    pub b: usize,
    pub w: usize,
    pub replicates: usize,
    pub seed: u64,
    pub candidates: usize,
    pub ref_size: usize,
    pub liar: String,
    pub hybrid_order: String,
    pub order: String,
    pub clock: String,
    pub mad: bool,
    pub mad_grid: usize,
    pub refit_every: usize,
}

#[derive(Serialize)]
struct DesignManifest<'a> {
    design: &'a DesignSettings,
    #[serde(skip_serializing_if = "Option::is_none")]
    problem: Option<&'a ProblemSettings>,
}

/// Resolved design settings, problem, and per-replicate engine config template.
pub struct DesignPlan {
    pub settings: DesignSettings,
    pub overrides: Option<ProblemSettings>,
    pub test: TestProblem,
    pub problem: CalibrationProblem,
    pub engine: EngineConfig,
}

pub fn resolve_design(args: &DesignArgs) -> CliResult<DesignPlan> {
    let (src, file) = Source::load(args.config.as_deref())?;
    let f = file.design.unwrap_or_default();
    let d = EngineConfig::new(1, 1, 1, AcquisitionSpec::new(AcquisitionKind::Hybrid));
    const S: &str = "design";

    let problem_name = pick(args.problem.clone(), f.problem, "sphere".into(), "problem", S, "problem");
    let acq = pick(args.acq.clone(), f.acq, "hybrid".into(), "acq", S, "acq");
    let n = pick(args.n, f.n, 200, "n", S, "n");
    let n0 = pick(args.n0, f.n0, d.n0, "n0", S, "n0");
    let b = pick(args.b, f.b, 1, "b", S, "b");
    let w = pick(args.w, f.w, 1, "w", S, "w");
    let replicates = pick(args.replicates, f.replicates, 1, "replicates", S, "replicates");
    let seed = pick(args.seed, f.seed, 0, "seed", S, "seed");
    let candidates = pick(args.candidates, f.candidates, d.acquisition.candidate_count, "candidates", S, "candidates");
    let ref_size = pick(args.ref_size, f.ref_size, d.acquisition.reference_count, "ref-size", S, "ref_size");
    let liar = pick(args.liar.clone(), f.liar, LiarRule::default().to_string(), "liar", S, "liar");
    let hybrid_order = pick(args.hybrid_order.clone(), f.hybrid_order, HybridOrder::default().to_string(), "hybrid-order", S, "hybrid_order");
    let order = pick(args.order.clone(), f.order, CompletionOrder::default().to_string(), "order", S, "order");
    let clock = pick(args.clock.clone(), f.clock, ClockMode::default().to_string(), "clock", S, "clock");
    let mad = pick(args.mad, f.mad, true, "mad", S, "mad");
    let mad_grid = pick(args.mad_grid, f.mad_grid, metrics::MAD_GRID, "mad-grid", S, "mad_grid");
    let refit_every = pick(args.refit_every, f.refit_every, d.refit_every, "refit-every", S, "refit_every");

    let function: testbed::TestFunction = parse_with(&src, problem_name.clone())?;
    let kind: AcquisitionKind = parse_with(&src, acq.clone())?;
    let liar_rule: LiarRule = parse_with(&src, liar.clone())?;
    let order_rule: HybridOrder = parse_with(&src, hybrid_order.clone())?;
    let completion: CompletionOrder = parse_with(&src, order.clone())?;
    let clock_mode: ClockMode = parse_with(&src, clock.clone())?;
    let seed_value = check_seed(&src, seed)?;

    let positive = |(v, o): (usize, Origin), what: &str| -> CliResult<usize> {
        if v == 0 {
            Err(located(&src, o, format!("{what} must be at least 1")))
        } else {
            Ok(v)
        }
    };
    positive(n, "n")?;
    positive(replicates, "replicates")?;
    positive(candidates, "candidates")?;
    positive(ref_size, "ref_size")?;
    positive(refit_every, "refit_every")?;
    positive(b, "b")?;
    if mad.0 {
        positive(mad_grid, "mad_grid")?;
    }
    if n0.0 < 2 {
        return Err(located(&src, n0.1, format!("n0 must be at least 2, got {}", n0.0)));
    }
    if b.0 > w.0 {
        return Err(located(&src, b.1, format!("batch size b={} exceeds worker count w={}", b.0, w.0)));
    }
    if w.0 > n.0 {
        return Err(located(&src, w.1, format!("worker count w={} exceeds budget n={}", w.0, n.0)));
    }

    let mut test = TestProblem::new(function);
    let overrides = file.problem.clone();
    if let Some(o) = &overrides {
        let space = test.problem.space();
        let lower = o.lower.clone().unwrap_or_else(|| space.lower().to_vec());
        let upper = o.upper.clone().unwrap_or_else(|| space.upper().to_vec());
        let problem_err = |key: &'static str, e: Error| located(&src, Origin::File("problem", key), e);
        let space = ParameterSpace::new(lower, upper).map_err(|e| problem_err("lower", e))?;
        if space.dims() != 2 {
            return Err(problem_err("lower", Error::InvalidArgument("test problems are two-dimensional".into())));
        }
        let y = o.y.unwrap_or(test.problem.observation());
        let s2 = o.sigma2.unwrap_or(test.problem.noise_var());
        test.problem = CalibrationProblem::new(space, test.problem.simulator().clone(), y, s2)
            .map_err(|e| problem_err(if o.sigma2.is_some() { "sigma2" } else { "y" }, e))?;
    }

    let mut spec = AcquisitionSpec::new(kind);
    spec.candidate_count = candidates.0;
    spec.reference_count = ref_size.0;
    spec.liar = liar_rule;
    spec.hybrid_order = order_rule;
    let mut engine = EngineConfig::new(n.0, b.0, w.0, spec);
    engine.n0 = n0.0;
    engine.seeds = Seeds::from_base(seed_value);
    engine.order = completion;
    engine.clock = clock_mode;
    engine.refit_every = refit_every.0;
    if mad.0 {
        engine.mad = Some(MadReference::grid(&test, mad_grid.0));
    }

    let settings = DesignSettings {
        problem: function.name().into(),
        acq: kind.to_string(),
        n: n.0,
        n0: n0.0,
        b: b.0,
        w: w.0,
        replicates: replicates.0,
        seed: seed_value,
        candidates: candidates.0,
        ref_size: ref_size.0,
        liar: liar_rule.to_string(),
        hybrid_order: order_rule.to_string(),
        order: completion.to_string(),
        clock: clock_mode.to_string(),
        mad: mad.0,
        mad_grid: mad_grid.0,
        refit_every: refit_every.0,
    };
    Ok(DesignPlan { settings, overrides, problem: test.problem.clone(), test, engine })
}

pub fn replicate_dir(r: usize) -> String {
    format!("rep_{r:03}")
}

pub fn cmd_design(args: &DesignArgs) -> CliResult<PathBuf> {
    let plan = resolve_design(args)?;
    let out = args.out.clone().unwrap_or_else(|| output_root().join("design"));
    fs::create_dir_all(&out)?;
    let seeds = plan.engine.seeds;
    let mut run = RunInfo {
        command: "design".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        status: "running".into(),
        started: timestamp(),
        finished: None,
        seeds: [("init", seeds.init), ("candidates", seeds.candidates), ("rng", seeds.rng)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect(),
        artifacts: Vec::new(),
    };
    let body = DesignManifest { design: &plan.settings, problem: plan.overrides.as_ref() };
    write_manifest(&out, &run, &body)?;

    let pool = thread_pool(args.jobs)?;
    let results: Vec<(usize, Result<DesignTrace, crate::engine::DesignError>)> = pool.install(|| {
        (0..plan.settings.replicates)
            .into_par_iter()
            .map(|r| {
                let mut cfg = plan.engine.clone();
                cfg.replicate = r;
                (r, run_design(&plan.problem, &cfg))
            })
            .collect()
    });

    let mut failures = Vec::new();
    for (r, result) in results {
        let dir = out.join(replicate_dir(r));
        let mut cfg = plan.engine.clone();
        cfg.replicate = r;
        let trace = match result {
            Ok(trace) => trace,
            Err(e) => {
                failures.push(format!("replicate {r}: {e}"));
                match e.partial {
                    Some(p) => *p,
                    None => continue,
                }
            }
        };
        trace_io::write_design_trace(&dir, &plan.settings.problem, &cfg, &trace)?;
        for f in [trace_io::JOBS_FILE, trace_io::STAGES_FILE, trace_io::TIMINGS_FILE] {
            run.artifacts.push(format!("{}/{f}", replicate_dir(r)));
        }
    }
    run.finished = Some(timestamp());
    run.status = if failures.is_empty() { "complete".into() } else { "failed".into() };
    write_manifest(&out, &run, &body)?;
    if failures.is_empty() {
        Ok(out)
    } else {
        Err(CliError { code: EXIT_RUNTIME, message: failures.join("; ") })
    }
}

// ---------------------------------------------------------------------------
// perf

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveSettings {
    pub kind: String,
    pub n: usize,
    pub exponent: OneOrMany,
    pub piecewise: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub table: Option<Vec<(usize, f64)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AcqSettings {
    pub kind: String,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tail: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSettings {
    pub kind: String,
    pub mean: f64,
    pub std: f64,
    pub floor: f64,
}

/// Fully resolved perf settings. Defaults reproduce the b ∈ {1, 64, 128},
/// w = 128 study with linear acquisition times and truncated-normal run times.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerfSettings {
    pub alpha: f64,
    pub replicates: usize,
    pub seed: u64,
    pub b: Vec<usize>,
    pub w: Vec<usize>,
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline_w: Option<usize>,
    pub curve: CurveSettings,
    pub acq_time: AcqSettings,
    pub run_time: RunSettings,
}

#[derive(Serialize)]
struct PerfManifest<'a> {
    perf: &'a PerfSettings,
}

/// One grid cell of a perf study.
#[derive(Debug, Clone)]
pub struct PerfCell {
    pub dir: String,
    pub scenario: PerfScenario,
}

pub fn resolve_perf(args: &PerfArgs) -> CliResult<(PerfSettings, Vec<PerfCell>)> {
    let (src, file) = Source::load(args.config.as_deref())?;
    let f = file.perf.unwrap_or_default();
    let cf = f.curve.unwrap_or_default();
    let af = f.acq_time.unwrap_or_default();
    let rf = f.run_time.unwrap_or_default();
    const P: &str = "perf";
    const C: &str = "perf.curve";
    const A: &str = "perf.acq_time";
    const R: &str = "perf.run_time";

    let alpha = pick(args.alpha, f.alpha, 0.1, "alpha", P, "alpha");
    let replicates = pick(args.replicates, f.replicates, 30, "replicates", P, "replicates");
    let seed = pick(args.seed, f.seed, 0, "seed", P, "seed");
    let bs = pick(args.b.clone(), f.b, vec![1, 64, 128], "b", P, "b");
    let ws = pick(args.w.clone(), f.w, vec![128], "w", P, "w");
    let label = pick(args.label.clone(), f.label, "hybrid".into(), "label", P, "label").0;
    let curve_kind = cf.kind.unwrap_or_else(|| "exponential".into());
    let curve_n = pick(args.curve_n, cf.n, 1280, "curve-n", C, "n");
    let exponent = pick(
        args.exponent.clone().map(OneOrMany::Many),
        cf.exponent,
        if matches!(bs.1, Origin::Default) { OneOrMany::Many(vec![0.10, 0.20, 0.25]) } else { OneOrMany::One(0.10) },
        "exponent",
        C,
        "exponent",
    );
    let piecewise = pick(args.piecewise, cf.piecewise, true, "piecewise", C, "piecewise").0;
    let acq_kind = pick(args.acq_kind.clone(), af.kind, "linear".into(), "acq-kind", A, "kind");
    let acq_a = pick(args.acq_a, af.a, 1.0, "acq-a", A, "a").0;
    let acq_b = pick(args.acq_b, af.b, 1.0, "acq-b", A, "b").0;
    let acq_c = pick(args.acq_c, af.c, 0.0, "acq-c", A, "c").0;
    let acq_tail = pick(args.acq_tail.map(Some), af.tail.map(Some), Some(0.25), "acq-tail", A, "tail").0;
    let run_kind = pick(args.run_kind.clone(), rf.kind, "truncated-normal".into(), "run-kind", R, "kind");
    let run_mean = pick(args.run_mean, rf.mean, 1.0, "run-mean", R, "mean");
    let run_std = pick(args.run_std, rf.std, 1.0, "run-std", R, "std").0;
    let run_floor = pick(args.run_floor, rf.floor, 0.1, "run-floor", R, "floor").0;
    let seed_value = check_seed(&src, seed)?;

    if !(alpha.0 > 0.0 && alpha.0 < 1.0) {
        return Err(located(&src, alpha.1, format!("alpha must lie in (0, 1), got {}", alpha.0)));
    }
    if replicates.0 == 0 {
        return Err(located(&src, replicates.1, "replicates must be at least 1"));
    }
    if bs.0.is_empty() || bs.0.contains(&0) {
        return Err(located(&src, bs.1, "batch sizes must be positive and nonempty"));
    }
    if ws.0.is_empty() || ws.0.contains(&0) {
        return Err(located(&src, ws.1, "worker counts must be positive and nonempty"));
    }

    let exps = exponent.0.to_vec();
    if exps.len() != 1 && exps.len() != bs.0.len() {
        return Err(located(
            &src,
            exponent.1,
            format!("need one exponent or one per batch size ({}), got {}", bs.0.len(), exps.len()),
        ));
    }

    let (acq_model, acq_values) = match (&args.from_trace, af.values.clone()) {
        (Some(dir), _) => {
            let values = measured_acq_times(dir)?;
            (AcqTimeModel::Measured(values.clone()), Some(values))
        }
        (None, Some(values)) if acq_kind.0 == "measured" => (AcqTimeModel::Measured(values.clone()), Some(values)),
        _ => {
            let kind: AcqTimeKind = parse_with(&src, acq_kind.clone())?;
            (AcqTimeModel::Formula { kind, a: acq_a, b: acq_b, c: acq_c, tail: acq_tail }, None)
        }
    };
    acq_model.validate().map_err(|e| located(&src, acq_kind.1, e))?;
    let run_model = match run_kind.0.trim().to_ascii_lowercase().as_str() {
        "constant" => RunTimeModel::Constant { mean: run_mean.0 },
        "truncated-normal" | "normal" => RunTimeModel::TruncatedNormal { mean: run_mean.0, std: run_std, floor: run_floor },
        other => return Err(located(&src, run_kind.1, format!("unknown run-time kind `{other}`"))),
    };
    run_model.validate().map_err(|e| located(&src, run_mean.1, e))?;

    let curve_for = |i: usize, b: usize| -> CliResult<ProgressCurve> {
        let base = match curve_kind.as_str() {
            "exponential" => {
                let e = if exps.len() == 1 { exps[0] } else { exps[i] };
                ProgressCurve::exponential(e, curve_n.0).map_err(|e| located(&src, exponent.1, e))?
            }
            "empirical" => {
                let table = cf.table.clone().ok_or_else(|| located(&src, Origin::File(C, "kind"), "empirical curve needs `table`"))?;
                ProgressCurve::empirical(table).map_err(|e| located(&src, Origin::File(C, "table"), e))?
            }
            other => return Err(located(&src, Origin::File(C, "kind"), format!("unknown curve kind `{other}`"))),
        };
        if piecewise && b > 1 {
            Ok(ProgressCurve::piecewise(base, b)?)
        } else {
            Ok(base)
        }
    };

    let mut cells = Vec::new();
    for (i, &b) in bs.0.iter().enumerate() {
        let curve = curve_for(i, b)?;
        for &w in &ws.0 {
            if b > w {
                continue;
            }
            let scenario = PerfScenario::from_curve(
                label.clone(),
                b,
                w,
                &curve,
                alpha.0,
                acq_model.clone(),
                run_model,
                replicates.0,
                seed_value,
            )
            .map_err(|e| located(&src, ws.1, e))?;
            cells.push(PerfCell { dir: format!("b{b}_w{w}"), scenario });
        }
    }
    if cells.is_empty() {
        return Err(located(&src, bs.1, "no grid cell satisfies b ≤ w"));
    }

    let settings = PerfSettings {
        alpha: alpha.0,
        replicates: replicates.0,
        seed: seed_value,
        b: bs.0,
        w: ws.0,
        label,
        baseline_w: f.baseline_w,
        curve: CurveSettings { kind: curve_kind.clone(), n: curve_n.0, exponent: exponent.0, piecewise, table: cf.table },
        acq_time: AcqSettings {
            kind: if acq_values.is_some() { "measured".into() } else { acq_kind.0 },
            a: acq_a,
            b: acq_b,
            c: acq_c,
            tail: acq_tail,
            values: acq_values,
        },
        run_time: RunSettings { kind: run_kind.0, mean: run_mean.0, std: run_std, floor: run_floor },
    };
    Ok((settings, cells))
}

/// Per-stage acquisition seconds averaged over the design replicates under `dir`.
fn measured_acq_times(dir: &Path) -> CliResult<Vec<f64>> {
    let mut per_stage: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (d, kind) in trace_io::find_trace_dirs(dir)? {
        if kind != TraceKind::Design {
            continue;
        }
        for (stage, secs) in trace_io::read_timings(&d)? {
            per_stage.entry(stage).or_default().push(secs);
        }
    }
    if per_stage.is_empty() {
        return Err(CliError::config(format!("--from-trace: no design timings under {}", dir.display())));
    }
    Ok(per_stage.values().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect())
}

pub fn cmd_perf(args: &PerfArgs) -> CliResult<PathBuf> {
    let (settings, cells) = resolve_perf(args)?;
    let out = args.out.clone().unwrap_or_else(|| output_root().join("perf"));
    fs::create_dir_all(&out)?;
    let mut run = RunInfo {
        command: "perf".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        status: "running".into(),
        started: timestamp(),
        finished: None,
        seeds: [("runtime".to_string(), settings.seed.to_string())].into_iter().collect(),
        artifacts: Vec::new(),
    };
    let body = PerfManifest { perf: &settings };
    write_manifest(&out, &run, &body)?;
    let pool = thread_pool(args.jobs)?;
    let traces: Vec<_> = pool.install(|| cells.par_iter().map(|c| run_scenario(&c.scenario)).collect());
    for (cell, tr) in cells.iter().zip(&traces) {
        trace_io::write_perf_traces(&out.join(&cell.dir), &cell.scenario, tr)?;
        run.artifacts.push(format!("{}/{}", cell.dir, trace_io::PERF_JOBS_FILE));
        run.artifacts.push(format!("{}/{}", cell.dir, trace_io::PERF_STAGES_FILE));
    }
    run.finished = Some(timestamp());
    run.status = "complete".into();
    write_manifest(&out, &run, &body)?;
    Ok(out)
}

// ---------------------------------------------------------------------------
// report

const PLOT_SCRIPT: &str = r#"#!/usr/bin/env python3
"""Plot every series in series.csv, one panel per x/y unit pair."""
import csv
import sys
from collections import defaultdict
from pathlib import Path

import matplotlib.pyplot as plt

here = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parent
rows = list(csv.DictReader(open(here / "series.csv")))
panels = defaultdict(lambda: defaultdict(list))
for r in rows:
    panels[(r["x_unit"], r["y_unit"], r["series_label"].rsplit("/", 1)[-1])][r["series_label"]].append(r)

fig, axes = plt.subplots(1, max(len(panels), 1), figsize=(5 * max(len(panels), 1), 4), squeeze=False)
for ax, ((xu, yu, metric), series) in zip(axes[0], sorted(panels.items())):
    for label, pts in sorted(series.items()):
        x = [float(p["x"]) for p in pts]
        ax.plot(x, [float(p["y_median"]) for p in pts], label=label)
        ax.fill_between(x, [float(p["y_q1"]) for p in pts], [float(p["y_q3"]) for p in pts], alpha=0.2)
    ax.set_xlabel(xu)
    ax.set_ylabel(f"{metric} ({yu})")
    ax.set_yscale("log")
    ax.legend(fontsize="small")
fig.tight_layout()
fig.savefig(here / "series.png", dpi=150)
"#;

struct DesignGroup {
    problem: String,
    acq: String,
    batch: usize,
    workers: usize,
    wall: bool,
    traces: Vec<DesignTrace>,
}

pub fn cmd_report(args: &ReportArgs) -> CliResult<PathBuf> {
    let mut dirs = Vec::new();
    for input in &args.inputs {
        if !input.is_dir() {
            return Err(CliError::config(format!("{} is not a directory", input.display())));
        }
        dirs.extend(trace_io::find_trace_dirs(input)?);
    }
    dirs.sort();
    dirs.dedup();
    if dirs.is_empty() {
        return Err(CliError::config("no traces found under the given inputs"));
    }
    let kinds: Vec<TraceKind> = dirs.iter().map(|d| d.1).collect();
    if kinds.iter().any(|k| *k != kinds[0]) {
        let design = dirs.iter().find(|d| d.1 == TraceKind::Design).expect("mixed");
        return Err(Error::Schema {
            path: design.0.display().to_string(),
            reason: "design and perf traces cannot be reported together".into(),
        }
        .into());
    }
    let out = args.out.clone().unwrap_or_else(|| output_root().join("report"));
    fs::create_dir_all(&out)?;
    let (series, rows) = match kinds[0] {
        TraceKind::Design => report_design(&dirs, args.baseline_w)?,
        TraceKind::Perf => report_perf(&dirs, args.baseline_w)?,
    };
    trace_io::write_series(&out.join("series.csv"), &series)?;
    trace_io::write_summary(&out.join("summary.csv"), &rows)?;
    fs::write(out.join("plot_series.py"), PLOT_SCRIPT)?;
    Ok(out)
}

fn header_usize(h: &Header, key: &str, name: &str, dir: &Path) -> CliResult<usize> {
    h.item(key, name).and_then(|v| v.parse().ok()).ok_or_else(|| {
        Error::Schema { path: dir.display().to_string(), reason: format!("header lacks {key}.{name}") }.into()
    })
}

fn report_design(dirs: &[(PathBuf, TraceKind)], baseline_w: Option<usize>) -> CliResult<(Vec<MetricSeries>, Vec<metrics::SummaryRow>)> {
    let mut groups: BTreeMap<String, DesignGroup> = BTreeMap::new();
    for (dir, _) in dirs {
        let (h, trace) = trace_io::read_design_trace(dir)?;
        let problem = h.get("problem").unwrap_or("unknown").to_string();
        let acq = h.item("acquisition", "kind").unwrap_or("unknown").to_string();
        let batch = header_usize(&h, "budget", "batch", dir)?;
        let workers = header_usize(&h, "budget", "workers", dir)?;
        let wall = h.item("timing", "clock") == Some("wall");
        let key = format!("{problem}/{acq}/b{batch}_w{workers}");
        groups
            .entry(key)
            .or_insert_with(|| DesignGroup { problem, acq, batch, workers, wall, traces: Vec::new() })
            .traces
            .push(trace);
    }
    let mut series = Vec::new();
    let mut makespans = BTreeMap::new();
    let mut meta = Vec::new();
    for (key, g) in &groups {
        let test = testbed::make(&g.problem).ok();
        let y = test.as_ref().map_or(0.0, |t| t.problem.observation());
        let deltas: Vec<MetricSeries> = g.traces.iter().map(|t| metrics::delta_series(t, y)).collect();
        series.push(MetricSeries::aggregate(format!("{key}/delta"), &deltas)?);
        if let Some(test) = &test {
            let mads = g
                .traces
                .iter()
                .map(|t| recorded_or_rebuilt_mad(t, test))
                .collect::<crate::Result<Vec<_>>>()?;
            series.push(MetricSeries::aggregate(format!("{key}/mad"), &mads)?);
        }
        let spans: Vec<f64> = g
            .traces
            .iter()
            .map(|t| t.jobs.iter().map(|j| j.complete_time).fold(0.0, f64::max))
            .collect();
        makespans.insert((g.workers, g.batch), median(&spans));
        meta.push((g.workers, g.batch, g.acq.clone(), g.wall));
    }
    let ratios = metrics::speedup(&makespans, baseline_w)?;
    let rows = meta
        .into_iter()
        .map(|(w, b, acq, _)| metrics::SummaryRow {
            batch: b,
            workers: w,
            acq,
            makespan_median: makespans[&(w, b)],
            speedup: ratios[&(w, b)],
            idle_avg: f64::NAN,
            compute_hours: w as f64 * makespans[&(w, b)],
        })
        .collect();
    Ok((series, rows))
}

fn recorded_or_rebuilt_mad(trace: &DesignTrace, test: &TestProblem) -> crate::Result<MetricSeries> {
    if trace.stages.iter().all(|s| s.mad.is_some()) {
        let points = trace
            .stages
            .iter()
            .map(|s| metrics::SeriesPoint::single((trace.n0 + s.n_t) as f64, s.mad.expect("checked")))
            .collect();
        return Ok(MetricSeries { label: "mad".into(), x_unit: metrics::XUnit::Evaluations, y_unit: metrics::YUnit::Error, points });
    }
    metrics::mad_series(trace, test, &MadReference::grid(test, metrics::MAD_GRID))
}

fn report_perf(dirs: &[(PathBuf, TraceKind)], baseline_w: Option<usize>) -> CliResult<(Vec<MetricSeries>, Vec<metrics::SummaryRow>)> {
    let mut cells = Vec::new();
    let mut series = Vec::new();
    for (dir, _) in dirs {
        let (h, traces) = trace_io::read_perf_traces(dir)?;
        let b = header_usize(&h, "budget", "batch", dir)?;
        let w = header_usize(&h, "budget", "workers", dir)?;
        let label = h.item("scenario", "label").unwrap_or("scenario").to_string();
        if let Some(curve) = h.item("scenario", "curve").and_then(|c| ProgressCurve::parse_spec(c).ok()) {
            series.push(MetricSeries {
                label: format!("{label}/b{b}_w{w}/wallclock"),
                ..metrics::wallclock_error_curve(&traces, &curve)?
            });
        }
        cells.push((b, w, label, traces));
    }
    cells.sort_by(|a, b| (a.0, a.1, &a.2).cmp(&(b.0, b.1, &b.2)));
    let rows = metrics::summarize(&cells, baseline_w)?;
    Ok((series, rows))
}
