//! Monte Carlo performance model for batched sequential designs.
//!
//! A scenario fixes batch size `b`, worker count `w`, the number of
//! evaluations `n_k` an acquisition rule needs to hit the target error, and
//! models for acquisition and simulation times. [`simulate`] replays the
//! manager loop with synthetic clocks: each stage waits for the `b`-th
//! earliest pending completion, pays the acquisition time, then resubmits
//! `b` jobs.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::{Error, Result};

/// Calibration error as a function of completed evaluations.
#[derive(Debug, Clone, PartialEq)]
pub enum ProgressCurve {
    /// `1 − (j/n)^exponent`.
    Exponential { exponent: f64, n: usize },
    /// Step function through `(j, error)` pairs; error is 1 before the first entry.
    Empirical { table: Vec<(usize, f64)> },
    /// `base` held constant between multiples of `batch`.
    PiecewiseBatch { base: Box<ProgressCurve>, batch: usize },
}

impl ProgressCurve {
    pub fn exponential(exponent: f64, n: usize) -> Result<Self> {
        if !(exponent > 0.0 && exponent.is_finite()) || n == 0 {
            return Err(Error::InvalidArgument(format!(
                "exponential curve needs exponent > 0 and n > 0 (got {exponent}, {n})"
            )));
        }
        Ok(ProgressCurve::Exponential { exponent, n })
    }

    pub fn empirical(mut table: Vec<(usize, f64)>) -> Result<Self> {
        if table.is_empty() {
            return Err(Error::InvalidArgument("empirical curve table is empty".into()));
        }
        table.sort_by_key(|&(j, _)| j);
        let mut last = 1.0;
        for w in table.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::InvalidArgument(format!("duplicate evaluation count {}", w[0].0)));
            }
        }
        for &(j, e) in &table {
            if !(0.0..=1.0).contains(&e) || e > last {
                return Err(Error::InvalidArgument(format!(
                    "empirical error at j={j} must lie in [0,1] and be nonincreasing (got {e})"
                )));
            }
            last = e;
        }
        Ok(ProgressCurve::Empirical { table })
    }

    /// Normalizes a running-minimum loss series by its first value.
    pub fn from_losses(losses: &[f64]) -> Result<Self> {
        let first = *losses
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty loss series".into()))?;
        let mut best = f64::INFINITY;
        let table = losses
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                best = best.min(l);
                let e = if first > 0.0 { (best / first).clamp(0.0, 1.0) } else { 0.0 };
                (i + 1, e)
            })
            .collect();
        Self::empirical(table)
    }

    pub fn piecewise(base: ProgressCurve, batch: usize) -> Result<Self> {
        if batch == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        Ok(ProgressCurve::PiecewiseBatch { base: Box::new(base), batch })
    }

    /// Compact text form, e.g. `piecewise:64:exponential:0.2:1280`.
    /// Empirical tables are summarized by length and cannot be parsed back.
    pub fn spec(&self) -> String {
        match self {
            ProgressCurve::Exponential { exponent, n } => format!("exponential:{exponent}:{n}"),
            ProgressCurve::Empirical { table } => format!("empirical:{}", table.len()),
            ProgressCurve::PiecewiseBatch { base, batch } => format!("piecewise:{batch}:{}", base.spec()),
        }
    }

    pub fn parse_spec(spec: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("unparseable curve spec `{spec}`"));
        let parts: Vec<&str> = spec.split(':').collect();
        match parts.as_slice() {
            ["exponential", e, n] => Self::exponential(e.parse().map_err(|_| bad())?, n.parse().map_err(|_| bad())?),
            ["piecewise", b, rest @ ..] => Self::piecewise(Self::parse_spec(&rest.join(":"))?, b.parse().map_err(|_| bad())?),
            _ => Err(bad()),
        }
    }

    /// Largest evaluation count the curve is defined for.
    pub fn horizon(&self) -> usize {
        match self {
            ProgressCurve::Exponential { n, .. } => *n,
            ProgressCurve::Empirical { table } => table.last().map_or(0, |e| e.0),
            ProgressCurve::PiecewiseBatch { base, .. } => base.horizon(),
        }
    }

    pub fn error_at(&self, j: usize) -> f64 {
        match self {
            ProgressCurve::Exponential { exponent, n } => {
                let frac = (j.min(*n) as f64) / *n as f64;
                (1.0 - frac.powf(*exponent)).clamp(0.0, 1.0)
            }
            ProgressCurve::Empirical { table } => match table.partition_point(|&(k, _)| k <= j) {
                0 => 1.0,
                i => table[i - 1].1,
            },
            ProgressCurve::PiecewiseBatch { base, batch } => base.error_at(batch * (j / batch)),
        }
    }

    /// Smallest `j` with `error_at(j) ≤ alpha`.
    pub fn evals_to_accuracy(&self, alpha: f64) -> Result<usize> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("alpha must lie in (0,1), got {alpha}")));
        }
        let budget = self.horizon();
        (1..=budget)
            .find(|&j| self.error_at(j) <= alpha)
            .ok_or(Error::InfeasibleTarget { alpha, budget })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcqTimeKind {
    Constant,
    Linear,
    Quadratic,
}

impl std::str::FromStr for AcqTimeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "constant" => Ok(AcqTimeKind::Constant),
            "linear" => Ok(AcqTimeKind::Linear),
            "quadratic" => Ok(AcqTimeKind::Quadratic),
            other => Err(Error::InvalidArgument(format!("unknown acquisition-time kind `{other}`"))),
        }
    }
}

/// Time to acquire the picks of one stage.
#[derive(Debug, Clone, PartialEq)]
pub enum AcqTimeModel {
    /// The first pick of a stage costs `a + b·(j/n) + c·(j/n)²` (terms by kind);
    /// later picks cost `tail`, or the same formula at their own index when unset.
    Formula { kind: AcqTimeKind, a: f64, b: f64, c: f64, tail: Option<f64> },
    /// Per-stage measurements, replayed in order and then averaged.
    Measured(Vec<f64>),
}

impl AcqTimeModel {
    /// `a` per stage regardless of batch size.
    pub fn constant(a: f64) -> Self {
        AcqTimeModel::Formula { kind: AcqTimeKind::Constant, a, b: 0.0, c: 0.0, tail: Some(0.0) }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            AcqTimeModel::Formula { a, b, c, tail, .. } => {
                [*a, *b, *c].iter().all(|v| v.is_finite()) && tail.is_none_or(|t| t >= 0.0 && t.is_finite())
            }
            AcqTimeModel::Measured(v) => !v.is_empty() && v.iter().all(|x| *x >= 0.0 && x.is_finite()),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid acquisition-time model {self:?}")))
        }
    }

    fn pick_time(kind: AcqTimeKind, a: f64, b: f64, c: f64, x: f64) -> f64 {
        let v = match kind {
            AcqTimeKind::Constant => a,
            AcqTimeKind::Linear => a + b * x,
            AcqTimeKind::Quadratic => a + b * x + c * x * x,
        };
        v.max(0.0)
    }

    /// Total acquisition time of stage `t ≥ 1` for batch size `batch` and budget `n`.
    pub fn stage_time(&self, batch: usize, t: usize, n: usize) -> f64 {
        match self {
            AcqTimeModel::Formula { kind, a, b, c, tail } => {
                let first = 1 + batch * (t - 1);
                let at = |j: usize| Self::pick_time(*kind, *a, *b, *c, j as f64 / n as f64);
                let rest: f64 = match tail {
                    Some(tau) => (batch - 1) as f64 * tau,
                    None => (first + 1..first + batch).map(at).sum(),
                };
                at(first) + rest
            }
            AcqTimeModel::Measured(v) => match v.get(t - 1) {
                Some(x) => *x,
                None => v.iter().sum::<f64>() / v.len() as f64,
            },
        }
    }
}

/// Distribution of simulation run times.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RunTimeModel {
    Constant { mean: f64 },
    /// `max(floor, N(mean, std²))`.
    TruncatedNormal { mean: f64, std: f64, floor: f64 },
}

impl RunTimeModel {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            RunTimeModel::Constant { mean } => mean > 0.0 && mean.is_finite(),
            RunTimeModel::TruncatedNormal { mean, std, floor } => {
                mean.is_finite() && std >= 0.0 && std.is_finite() && floor > 0.0 && floor.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid run-time model {self:?}")))
        }
    }
}

/// Counter-based run-time draws: job `j` of replicate `ω` always reads the
/// same block of the `(seed, ω)` ChaCha stream.
pub struct RunTimeSampler {
    model: RunTimeModel,
    rng: ChaCha8Rng,
}

impl RunTimeSampler {
    pub fn new(model: RunTimeModel, seed: u64, replicate: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(replicate);
        RunTimeSampler { model, rng }
    }

    pub fn sample(&mut self, j: u64) -> f64 {
        match self.model {
            RunTimeModel::Constant { mean } => mean,
            RunTimeModel::TruncatedNormal { mean, std, floor } => {
                self.rng.set_word_pos(u128::from(j) * 4);
                let u1 = open_unit(self.rng.next_u64());
                let u2 = open_unit(self.rng.next_u64());
                let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
                floor.max(mean + std * z)
            }
        }
    }
}

fn open_unit(x: u64) -> f64 {
    ((x >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

pub fn sample_runtime(model: RunTimeModel, seed: u64, replicate: u64, j: u64) -> f64 {
    RunTimeSampler::new(model, seed, replicate).sample(j)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerfScenario {
    pub batch: usize,
    pub workers: usize,
    pub label: String,
    /// Evaluations needed to reach the target error.
    pub n_k: usize,
    /// Budget `n` used to scale the acquisition-time index.
    pub budget: usize,
    pub acq_time: AcqTimeModel,
    pub run_time: RunTimeModel,
    pub replicates: usize,
    pub seed: u64,
    /// Curve `n_k` was derived from, when known.
    pub curve: Option<ProgressCurve>,
}

impl PerfScenario {
    /// Builds a scenario whose stop count comes from `curve` at level `alpha`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_curve(
        label: impl Into<String>,
        batch: usize,
        workers: usize,
        curve: &ProgressCurve,
        alpha: f64,
        acq_time: AcqTimeModel,
        run_time: RunTimeModel,
        replicates: usize,
        seed: u64,
    ) -> Result<Self> {
        let scenario = PerfScenario {
            batch,
            workers,
            label: label.into(),
            n_k: curve.evals_to_accuracy(alpha)?,
            budget: curve.horizon(),
            acq_time,
            run_time,
            replicates,
            seed,
            curve: Some(curve.clone()),
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.batch > self.workers || self.workers > self.n_k {
            return Err(Error::InvalidArgument(format!(
                "need 1 ≤ b ≤ w ≤ n_k, got b={}, w={}, n_k={}",
                self.batch, self.workers, self.n_k
            )));
        }
        if self.replicates == 0 || self.budget == 0 {
            return Err(Error::InvalidArgument("replicates and budget must be positive".into()));
        }
        self.acq_time.validate()?;
        self.run_time.validate()
    }
}

/// One replicate of the performance model. Jobs and stages are 1-based in
/// the paper's notation; here `job_end[j - 1]` and `stage_end[t - 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerfTrace {
    pub replicate: usize,
    pub job_end: Vec<f64>,
    /// Stage that created each job; 0 for the initial wave.
    pub job_created: Vec<usize>,
    /// Stage that consumed each job, if any.
    pub job_consumed: Vec<Option<usize>>,
    pub stage_end: Vec<f64>,
    /// Jobs created after each stage.
    pub stage_jobs: Vec<usize>,
    /// Pending-set size after each stage's resubmission.
    pub pending: Vec<usize>,
}

impl PerfTrace {
    pub fn stages(&self) -> usize {
        self.stage_end.len()
    }

    pub fn jobs(&self) -> usize {
        self.job_end.len()
    }

    /// Latest of all job completions and stage ends.
    pub fn makespan(&self) -> f64 {
        self.job_end
            .iter()
            .chain(self.stage_end.last())
            .copied()
            .fold(0.0, f64::max)
    }
}

#[derive(PartialEq)]
struct Pending {
    end: f64,
    id: usize,
}

impl Eq for Pending {}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        self.end.total_cmp(&other.end).then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Runs replicate `replicate` of `scenario`.
pub fn simulate(scenario: &PerfScenario, replicate: usize) -> PerfTrace {
    let (b, w) = (scenario.batch, scenario.workers);
    let mut sampler = RunTimeSampler::new(scenario.run_time, scenario.seed, replicate as u64);
    let mut trace = PerfTrace {
        replicate,
        job_end: Vec::with_capacity(scenario.n_k + b),
        job_created: Vec::with_capacity(scenario.n_k + b),
        job_consumed: Vec::with_capacity(scenario.n_k + b),
        stage_end: Vec::new(),
        stage_jobs: Vec::new(),
        pending: Vec::new(),
    };
    let mut queue = BinaryHeap::with_capacity(w);
    for j in 1..=w {
        let end = sampler.sample(j as u64);
        trace.job_end.push(end);
        trace.job_created.push(0);
        trace.job_consumed.push(None);
        queue.push(Reverse(Pending { end, id: j }));
    }
    let mut n_t = w;
    let mut last = 0.0f64;
    let mut t = 0;
    while n_t < scenario.n_k {
        t += 1;
        let mut bth = 0.0;
        for _ in 0..b {
            let Reverse(job) = queue.pop().expect("pending set holds w ≥ b jobs");
            trace.job_consumed[job.id - 1] = Some(t);
            bth = job.end;
        }
        let end = last.max(bth) + scenario.acq_time.stage_time(b, t, scenario.budget);
        for i in 1..=b {
            let id = n_t + i;
            let job_end = end + sampler.sample(id as u64);
            trace.job_end.push(job_end);
            trace.job_created.push(t);
            trace.job_consumed.push(None);
            queue.push(Reverse(Pending { end: job_end, id }));
        }
        n_t += b;
        last = end;
        trace.stage_end.push(end);
        trace.stage_jobs.push(n_t);
        trace.pending.push(queue.len());
    }
    trace
}

/// All replicates of `scenario`, in replicate order.
pub fn run_scenario(scenario: &PerfScenario) -> Vec<PerfTrace> {
    (0..scenario.replicates)
        .into_par_iter()
        .map(|r| simulate(scenario, r))
        .collect()
}
