//! CSV serialization of design and performance traces.
//!
//! Every trace file starts with eight `#` lines describing the run, followed
//! by an ordinary CSV table. Floats are written with 17 significant digits so
//! they read back bit-exactly.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::engine::{ClockMode, DesignTrace, EngineConfig, JobRecord, StageRecord};
use crate::gp::KernelParams;
use crate::metrics::{MetricSeries, SummaryRow};
use crate::perf::{PerfScenario, PerfTrace, ProgressCurve};
use crate::{Error, Result};

pub const JOBS_FILE: &str = "jobs.csv";
pub const STAGES_FILE: &str = "stages.csv";
pub const TIMINGS_FILE: &str = "timings.csv";
pub const PERF_JOBS_FILE: &str = "perf_jobs.csv";
pub const PERF_STAGES_FILE: &str = "perf_stages.csv";
pub const HEADER_LINES: usize = 8;

const DESIGN_TAG: &str = "parcal design trace";
const PERF_TAG: &str = "parcal perf trace";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum TraceKind {
    Design,
    Perf,
}

/// Parsed `# key: value` header.
#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub kind: TraceKind,
    pub entries: BTreeMap<String, String>,
}

impl Header {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// `name=value` item inside the entry `key`.
    pub fn item(&self, key: &str, name: &str) -> Option<&str> {
        self.get(key)?
            .split_whitespace()
            .find_map(|kv| kv.strip_prefix(name)?.strip_prefix('='))
    }
}

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn design_header(problem: &str, config: &EngineConfig) -> [String; HEADER_LINES] {
    let a = &config.acquisition;
    [
        format!("# {DESIGN_TAG}"),
        format!("# problem: {problem}"),
        format!(
            "# acquisition: kind={} candidates={} reference={} liar={} hybrid_order={}",
            a.kind, a.candidate_count, a.reference_count, a.liar, a.hybrid_order
        ),
        format!("# budget: n0={} n={} batch={} workers={}", config.n0, config.n, config.batch, config.workers),
        format!(
            "# seeds: init={} candidates={} rng={}",
            config.seeds.init, config.seeds.candidates, config.seeds.rng
        ),
        format!("# replicate: {}", config.replicate),
        format!("# timing: clock={} order={} refit_every={}", config.clock, config.order, config.refit_every),
        format!("# version: {}", env!("CARGO_PKG_VERSION")),
    ]
}

fn perf_header(scenario: &PerfScenario) -> [String; HEADER_LINES] {
    [
        format!("# {PERF_TAG}"),
        format!(
            "# scenario: label={} curve={}",
            scenario.label,
            scenario.curve.as_ref().map_or_else(|| "none".to_string(), ProgressCurve::spec)
        ),
        format!(
            "# budget: batch={} workers={} n_k={} n={}",
            scenario.batch, scenario.workers, scenario.n_k, scenario.budget
        ),
        format!("# acq_time: {:?}", scenario.acq_time),
        format!("# run_time: {:?}", scenario.run_time),
        format!("# replicates: {}", scenario.replicates),
        format!("# seed: {}", scenario.seed),
        format!("# version: {}", env!("CARGO_PKG_VERSION")),
    ]
}

fn create(path: &Path, header: &[String]) -> Result<csv::Writer<BufWriter<File>>> {
    let mut out = BufWriter::new(File::create(path)?);
    for line in header {
        writeln!(out, "{line}")?;
    }
    Ok(csv::WriterBuilder::new().from_writer(out))
}

fn finish(w: csv::Writer<BufWriter<File>>) -> Result<()> {
    let mut inner = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    inner.flush()?;
    Ok(())
}

/// Writes `jobs.csv`, `stages.csv` and `timings.csv` into `dir`.
pub fn write_design_trace(dir: &Path, problem: &str, config: &EngineConfig, trace: &DesignTrace) -> Result<()> {
    fs::create_dir_all(dir)?;
    let header = design_header(problem, config);
    let logical = config.clock == ClockMode::Logical;
    let rep = trace.replicate.to_string();
    let dims = trace.jobs.first().map_or(0, |j| j.theta.len());

    let mut w = create(&dir.join(JOBS_FILE), &header)?;
    let mut cols: Vec<String> = vec!["replicate_id".into(), "job_id".into(), "stage".into()];
    cols.extend((1..=dims).map(|i| format!("theta_{i}")));
    cols.extend(["output", "submit_time", "complete_time", "consumed_stage"].map(String::from));
    w.write_record(&cols)?;
    for j in &trace.jobs {
        let mut row = vec![rep.clone(), j.job_id.to_string(), j.stage.to_string()];
        row.extend(j.theta.iter().map(|&x| fmt_f64(x)));
        row.push(fmt_f64(j.output));
        if logical {
            row.push(j.stage.to_string());
            row.push(j.consumed_stage.to_string());
        } else {
            row.push(fmt_f64(j.submit_time));
            row.push(fmt_f64(j.complete_time));
        }
        row.push(j.consumed_stage.to_string());
        w.write_record(&row)?;
    }
    finish(w)?;

    let mut w = create(&dir.join(STAGES_FILE), &header)?;
    let mut cols: Vec<String> = ["replicate_id", "stage", "n_t", "acq_time", "delta_t", "mad_t", "submitted", "picks", "pending", "scale", "nugget"]
        .map(String::from)
        .to_vec();
    cols.extend((1..=dims).map(|i| format!("log_lengthscale_{i}")));
    w.write_record(&cols)?;
    for s in &trace.stages {
        let mut row = vec![
            rep.clone(),
            s.stage.to_string(),
            s.n_t.to_string(),
            if logical { s.picks.to_string() } else { fmt_f64(s.acq_time) },
            fmt_f64(s.delta),
            s.mad.map(fmt_f64).unwrap_or_default(),
            s.submitted.to_string(),
            s.picks.to_string(),
            s.pending.to_string(),
            fmt_f64(s.params.scale),
            fmt_f64(s.params.nugget),
        ];
        row.extend(s.params.log_lengthscales.iter().map(|&x| fmt_f64(x)));
        w.write_record(&row)?;
    }
    finish(w)?;

    let mut w = csv::Writer::from_path(dir.join(TIMINGS_FILE))?;
    w.write_record(["replicate_id", "stage", "acq_seconds"])?;
    for s in &trace.stages {
        w.write_record([rep.clone(), s.stage.to_string(), fmt_f64(s.acq_time)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_header(path: &Path) -> Result<Header> {
    let schema = |reason: String| Error::Schema { path: path.display().to_string(), reason };
    let file = BufReader::new(File::open(path)?);
    let mut lines = Vec::with_capacity(HEADER_LINES);
    for line in file.lines().take(HEADER_LINES) {
        lines.push(line?);
    }
    if lines.len() < HEADER_LINES || !lines.iter().all(|l| l.starts_with("# ")) {
        return Err(schema(format!("expected a {HEADER_LINES}-line `#` header")));
    }
    let kind = match &lines[0][2..] {
        DESIGN_TAG => TraceKind::Design,
        PERF_TAG => TraceKind::Perf,
        other => return Err(schema(format!("unknown trace tag `{other}`"))),
    };
    let entries = lines[1..]
        .iter()
        .map(|l| {
            let (k, v) = l[2..].split_once(": ").ok_or_else(|| schema(format!("malformed header line `{l}`")))?;
            Ok((k.to_string(), v.to_string()))
        })
        .collect::<Result<_>>()?;
    Ok(Header { kind, entries })
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    Ok(csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?)
}

struct Columns {
    path: String,
    index: BTreeMap<String, usize>,
}

impl Columns {
    fn new(path: &Path, headers: &csv::StringRecord) -> Self {
        Columns {
            path: path.display().to_string(),
            index: headers.iter().enumerate().map(|(i, h)| (h.to_string(), i)).collect(),
        }
    }

    fn require(&self, names: &[&str]) -> Result<()> {
        match names.iter().find(|n| !self.index.contains_key(**n)) {
            Some(missing) => Err(Error::Schema { path: self.path.clone(), reason: format!("missing column `{missing}`") }),
            None => Ok(()),
        }
    }

    fn count_prefixed(&self, prefix: &str) -> usize {
        (1..).take_while(|i| self.index.contains_key(&format!("{prefix}{i}"))).count()
    }

    fn raw<'r>(&self, row: &'r csv::StringRecord, name: &str) -> &'r str {
        row.get(self.index[name]).unwrap_or("")
    }

    fn parse<T: std::str::FromStr>(&self, row: &csv::StringRecord, name: &str) -> Result<T> {
        let raw = self.raw(row, name);
        raw.trim().parse().map_err(|_| Error::Schema {
            path: self.path.clone(),
            reason: format!("bad value `{raw}` in column `{name}`"),
        })
    }
}

fn expect_kind(path: &Path, kind: TraceKind) -> Result<Header> {
    let header = read_header(path)?;
    if header.kind != kind {
        return Err(Error::Schema {
            path: path.display().to_string(),
            reason: format!("expected a {kind:?} trace, found {:?}", header.kind),
        });
    }
    Ok(header)
}

/// Reads a design trace written by [`write_design_trace`]. Times come back
/// in whatever units the header's clock recorded.
pub fn read_design_trace(dir: &Path) -> Result<(Header, DesignTrace)> {
    let jobs_path = dir.join(JOBS_FILE);
    let stages_path = dir.join(STAGES_FILE);
    let header = expect_kind(&jobs_path, TraceKind::Design)?;
    let stage_header = expect_kind(&stages_path, TraceKind::Design)?;
    if stage_header != header {
        return Err(Error::Schema { path: stages_path.display().to_string(), reason: "header differs from jobs.csv".into() });
    }

    let mut r = reader(&jobs_path)?;
    let cols = Columns::new(&jobs_path, r.headers()?);
    cols.require(&["replicate_id", "job_id", "stage", "output", "submit_time", "complete_time", "consumed_stage"])?;
    let dims = cols.count_prefixed("theta_");
    let mut jobs = Vec::new();
    let mut replicate = 0;
    for row in r.records() {
        let row = row?;
        replicate = cols.parse(&row, "replicate_id")?;
        jobs.push(JobRecord {
            job_id: cols.parse(&row, "job_id")?,
            stage: cols.parse(&row, "stage")?,
            theta: (1..=dims).map(|i| cols.parse(&row, &format!("theta_{i}"))).collect::<Result<_>>()?,
            output: cols.parse(&row, "output")?,
            submit_time: cols.parse(&row, "submit_time")?,
            complete_time: cols.parse(&row, "complete_time")?,
            consumed_stage: cols.parse(&row, "consumed_stage")?,
        });
    }

    let acq_seconds = read_timings(dir)?;
    let mut r = reader(&stages_path)?;
    let cols = Columns::new(&stages_path, r.headers()?);
    cols.require(&["stage", "n_t", "acq_time", "delta_t", "mad_t", "submitted", "picks", "pending", "scale", "nugget"])?;
    let ls_dims = cols.count_prefixed("log_lengthscale_");
    let mut stages = Vec::new();
    for row in r.records() {
        let row = row?;
        let stage: usize = cols.parse(&row, "stage")?;
        let mad = match cols.raw(&row, "mad_t") {
            "" => None,
            _ => Some(cols.parse(&row, "mad_t")?),
        };
        let params = KernelParams::new(
            (1..=ls_dims).map(|i| cols.parse(&row, &format!("log_lengthscale_{i}"))).collect::<Result<_>>()?,
            cols.parse(&row, "scale")?,
            cols.parse(&row, "nugget")?,
        )?;
        stages.push(StageRecord {
            stage,
            n_t: cols.parse(&row, "n_t")?,
            submitted: cols.parse(&row, "submitted")?,
            pending: cols.parse(&row, "pending")?,
            picks: cols.parse(&row, "picks")?,
            acq_time: match acq_seconds.get(&stage) {
                Some(&s) => s,
                None => cols.parse(&row, "acq_time")?,
            },
            delta: cols.parse(&row, "delta_t")?,
            mad,
            params,
        });
    }
    let n0 = jobs.iter().filter(|j| j.consumed_stage == 0).count();
    Ok((header, DesignTrace { replicate, n0, jobs, stages, complete: true }))
}

/// Measured acquisition seconds per stage, if `timings.csv` exists.
pub fn read_timings(dir: &Path) -> Result<BTreeMap<usize, f64>> {
    let path = dir.join(TIMINGS_FILE);
    if !path.exists() {
        return Ok(BTreeMap::new());
    }
    let mut r = reader(&path)?;
    let cols = Columns::new(&path, r.headers()?);
    cols.require(&["stage", "acq_seconds"])?;
    r.records()
        .map(|row| {
            let row = row?;
            Ok((cols.parse(&row, "stage")?, cols.parse(&row, "acq_seconds")?))
        })
        .collect()
}

/// Writes `perf_jobs.csv` and `perf_stages.csv` for all replicates of a scenario.
pub fn write_perf_traces(dir: &Path, scenario: &PerfScenario, traces: &[PerfTrace]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let header = perf_header(scenario);
    let mut w = create(&dir.join(PERF_JOBS_FILE), &header)?;
    w.write_record(["replicate", "job_id", "stage", "end_time", "consumed_stage"])?;
    for tr in traces {
        for (i, &end) in tr.job_end.iter().enumerate() {
            w.write_record([
                tr.replicate.to_string(),
                (i + 1).to_string(),
                tr.job_created[i].to_string(),
                fmt_f64(end),
                tr.job_consumed[i].map(|t| t.to_string()).unwrap_or_default(),
            ])?;
        }
    }
    finish(w)?;
    let mut w = create(&dir.join(PERF_STAGES_FILE), &header)?;
    w.write_record(["replicate", "stage", "end_time", "n_t", "pending"])?;
    for tr in traces {
        for (t, &end) in tr.stage_end.iter().enumerate() {
            w.write_record([
                tr.replicate.to_string(),
                (t + 1).to_string(),
                fmt_f64(end),
                tr.stage_jobs[t].to_string(),
                tr.pending[t].to_string(),
            ])?;
        }
    }
    finish(w)
}

pub fn read_perf_traces(dir: &Path) -> Result<(Header, Vec<PerfTrace>)> {
    let jobs_path = dir.join(PERF_JOBS_FILE);
    let stages_path = dir.join(PERF_STAGES_FILE);
    let header = expect_kind(&jobs_path, TraceKind::Perf)?;
    expect_kind(&stages_path, TraceKind::Perf)?;
    let mut by_rep: BTreeMap<usize, PerfTrace> = BTreeMap::new();
    let blank = |replicate| PerfTrace {
        replicate,
        job_end: Vec::new(),
        job_created: Vec::new(),
        job_consumed: Vec::new(),
        stage_end: Vec::new(),
        stage_jobs: Vec::new(),
        pending: Vec::new(),
    };

    let mut r = reader(&jobs_path)?;
    let cols = Columns::new(&jobs_path, r.headers()?);
    cols.require(&["replicate", "job_id", "stage", "end_time", "consumed_stage"])?;
    for row in r.records() {
        let row = row?;
        let rep: usize = cols.parse(&row, "replicate")?;
        let tr = by_rep.entry(rep).or_insert_with(|| blank(rep));
        tr.job_end.push(cols.parse(&row, "end_time")?);
        tr.job_created.push(cols.parse(&row, "stage")?);
        tr.job_consumed.push(match cols.raw(&row, "consumed_stage") {
            "" => None,
            _ => Some(cols.parse(&row, "consumed_stage")?),
        });
    }
    let mut r = reader(&stages_path)?;
    let cols = Columns::new(&stages_path, r.headers()?);
    cols.require(&["replicate", "stage", "end_time", "n_t", "pending"])?;
    for row in r.records() {
        let row = row?;
        let rep: usize = cols.parse(&row, "replicate")?;
        let tr = by_rep.entry(rep).or_insert_with(|| blank(rep));
        tr.stage_end.push(cols.parse(&row, "end_time")?);
        tr.stage_jobs.push(cols.parse(&row, "n_t")?);
        tr.pending.push(cols.parse(&row, "pending")?);
    }
    Ok((header, by_rep.into_values().collect()))
}

pub fn write_series(path: &Path, series: &[MetricSeries]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["series_label", "x_unit", "y_unit", "x", "y_median", "y_q1", "y_q3"])?;
    for s in series {
        for p in &s.points {
            w.write_record([
                s.label.clone(),
                s.x_unit.to_string(),
                s.y_unit.to_string(),
                fmt_f64(p.x),
                fmt_f64(p.median),
                fmt_f64(p.q1),
                fmt_f64(p.q3),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["b", "w", "acq", "makespan_median", "speedup", "idle_avg", "compute_hours"])?;
    for r in rows {
        w.write_record([
            r.batch.to_string(),
            r.workers.to_string(),
            r.acq.clone(),
            fmt_f64(r.makespan_median),
            fmt_f64(r.speedup),
            fmt_f64(r.idle_avg),
            fmt_f64(r.compute_hours),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Directories under `root` (inclusive) holding a trace of either kind.
pub fn find_trace_dirs(root: &Path) -> Result<Vec<(PathBuf, TraceKind)>> {
    let mut found = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        if dir.join(JOBS_FILE).is_file() {
            found.push((dir.clone(), TraceKind::Design));
        }
        if dir.join(PERF_JOBS_FILE).is_file() {
            found.push((dir.clone(), TraceKind::Perf));
        }
        for entry in fs::read_dir(&dir)? {
            let entry = entry?;
            if entry.file_type()?.is_dir() {
                stack.push(entry.path());
            }
        }
    }
    found.sort();
    Ok(found)
}
