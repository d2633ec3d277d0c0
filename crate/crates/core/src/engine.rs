//! Manager–worker sequential design loop.
//!
//! The coordinator thread owns the emulator and the trace. `w` worker
//! threads evaluate the simulator and report completions over a channel.
//! Each stage consumes `b` completions, refits the emulator, builds a
//! constant-liar batch, and resubmits. With `b = w` every stage consumes
//! exactly the previous wave, so runs are reproducible bit for bit.

use std::collections::BTreeMap;
use std::fmt;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::str::FromStr;
use std::thread;
use std::time::Instant;

use crossbeam_channel::{unbounded, Receiver, Sender};

use crate::acquisition::{build_batch, AcquisitionSpec, BestLoss};
use crate::gp::{FitConfig, GpPosterior, KernelParams};
use crate::metrics::{mad, MadReference};
use crate::problem::{sample_uniform_with, CalibrationProblem, Sample};
use crate::rng::{derive_seed, stream};
use crate::{Error, Result};

/// Which pending jobs a stage consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CompletionOrder {
    /// The `b` earliest completions.
    #[default]
    Earliest,
    /// The `b` lowest-id pending jobs; deterministic for any `b`, `w`.
    Submission,
}

impl fmt::Display for CompletionOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CompletionOrder::Earliest => "earliest",
            CompletionOrder::Submission => "submission",
        })
    }
}

impl FromStr for CompletionOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "earliest" => Ok(CompletionOrder::Earliest),
            "submission" => Ok(CompletionOrder::Submission),
            other => Err(Error::InvalidArgument(format!("unknown completion order `{other}`"))),
        }
    }
}

/// How times are written to trace files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClockMode {
    /// Stage indices instead of seconds; output replays byte for byte.
    #[default]
    Logical,
    /// Seconds on a monotonic clock since the run started.
    Wall,
}

impl fmt::Display for ClockMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClockMode::Logical => "logical",
            ClockMode::Wall => "wall",
        })
    }
}

impl FromStr for ClockMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "logical" => Ok(ClockMode::Logical),
            "wall" => Ok(ClockMode::Wall),
            other => Err(Error::InvalidArgument(format!("unknown clock mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Seeds {
    /// Initial design.
    pub init: u64,
    /// Candidate lists.
    pub candidates: u64,
    /// Initial wave, reference set and emulator restarts.
    pub rng: u64,
}

impl Seeds {
    pub fn from_base(base: u64) -> Self {
        Seeds { init: derive_seed(base, &[1]), candidates: derive_seed(base, &[2]), rng: derive_seed(base, &[3]) }
    }
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub n0: usize,
    /// Evaluations beyond the initial design.
    pub n: usize,
    pub batch: usize,
    pub workers: usize,
    pub acquisition: AcquisitionSpec,
    pub seeds: Seeds,
    pub replicate: usize,
    pub order: CompletionOrder,
    pub clock: ClockMode,
    /// Full multi-start refit every this many stages; warm start otherwise.
    pub refit_every: usize,
    pub mad: Option<MadReference>,
}

impl EngineConfig {
    pub fn new(n: usize, batch: usize, workers: usize, acquisition: AcquisitionSpec) -> Self {
        EngineConfig {
            n0: 10,
            n,
            batch,
            workers,
            acquisition,
            seeds: Seeds::default(),
            replicate: 0,
            order: CompletionOrder::default(),
            clock: ClockMode::default(),
            refit_every: 10,
            mad: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n0 < 2 {
            return Err(Error::InvalidArgument(format!("n0 must be at least 2, got {}", self.n0)));
        }
        if self.batch == 0 || self.batch > self.workers || self.workers > self.n {
            return Err(Error::InvalidArgument(format!(
                "need 1 ≤ b ≤ w ≤ n, got b={}, w={}, n={}",
                self.batch, self.workers, self.n
            )));
        }
        if self.refit_every == 0 {
            return Err(Error::InvalidArgument("refit interval must be positive".into()));
        }
        self.acquisition.validate()
    }

    /// Deterministic when every stage consumes a full wave, or ids decide.
    pub fn is_deterministic(&self) -> bool {
        self.batch == self.workers || self.order == CompletionOrder::Submission
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobRecord {
    pub job_id: usize,
    /// Stage whose acquisition produced the job; 0 for the initial design and wave.
    pub stage: usize,
    pub theta: Vec<f64>,
    pub output: f64,
    /// Seconds since run start.
    pub submit_time: f64,
    pub complete_time: f64,
    /// Stage that consumed the result; 0 for the initial design.
    pub consumed_stage: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageRecord {
    pub stage: usize,
    /// Results consumed so far, excluding the initial design.
    pub n_t: usize,
    /// Jobs submitted so far, excluding the initial design.
    pub submitted: usize,
    /// Jobs in flight after this stage's submissions.
    pub pending: usize,
    /// Picks acquired this stage.
    pub picks: usize,
    /// Seconds spent refitting and acquiring.
    pub acq_time: f64,
    pub delta: f64,
    pub mad: Option<f64>,
    pub params: KernelParams,
}

/// Everything a design run produced, in consumption order.
#[derive(Debug, Clone)]
pub struct DesignTrace {
    pub replicate: usize,
    pub n0: usize,
    pub jobs: Vec<JobRecord>,
    pub stages: Vec<StageRecord>,
    pub complete: bool,
}

impl DesignTrace {
    /// Samples the emulator saw after stage `t` (0 = initial design only).
    pub fn data_through(&self, t: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        self.jobs
            .iter()
            .filter(|j| j.consumed_stage <= t)
            .map(|j| (j.theta.clone(), j.output))
            .unzip()
    }

    /// The stage-`t` emulator, rebuilt from its recorded hyperparameters.
    pub fn emulator_at(&self, t: usize) -> Result<GpPosterior> {
        let record = self
            .stages
            .iter()
            .find(|s| s.stage == t)
            .ok_or_else(|| Error::InvalidArgument(format!("no stage {t} in trace")))?;
        let (inputs, outputs) = self.data_through(t);
        GpPosterior::with_params(&inputs, &outputs, record.params.clone(), None)
    }

    /// Absolute discrepancies `|y − η(θ_j)|` in consumption order.
    pub fn losses(&self, observation: f64) -> Vec<f64> {
        self.jobs.iter().map(|j| (observation - j.output).abs()).collect()
    }
}

/// A failed run and whatever had been recorded before the failure.
#[derive(Debug)]
pub struct DesignError {
    pub source: Error,
    pub partial: Option<Box<DesignTrace>>,
}

impl fmt::Display for DesignError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.source)?;
        if let Some(p) = &self.partial {
            write!(f, " (partial trace: {} jobs, {} stages)", p.jobs.len(), p.stages.len())?;
        }
        Ok(())
    }
}

impl std::error::Error for DesignError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

impl From<Error> for DesignError {
    fn from(source: Error) -> Self {
        DesignError { source, partial: None }
    }
}

/// `n0` prior draws, evaluated in order.
pub fn initial_design(problem: &CalibrationProblem, n0: usize, seed: u64) -> Result<Vec<Sample>> {
    if n0 < 2 {
        return Err(Error::InvalidArgument(format!("n0 must be at least 2, got {n0}")));
    }
    let mut rng = stream(seed, &[]);
    sample_uniform_with(problem.space(), n0, &mut rng)
        .into_iter()
        .map(|theta| {
            let out = problem.evaluate(&theta)?;
            Ok(Sample::evaluated(theta, out))
        })
        .collect()
}

struct Job {
    id: usize,
    theta: Vec<f64>,
}

struct Completion {
    id: usize,
    output: Result<f64>,
    at: Instant,
}

struct InFlight {
    stage: usize,
    theta: Vec<f64>,
    submitted: Instant,
}

fn worker(problem: &CalibrationProblem, jobs: Receiver<Job>, done: Sender<Completion>) {
    for job in jobs {
        let output = catch_unwind(AssertUnwindSafe(|| problem.evaluate(&job.theta)))
            .unwrap_or_else(|_| Err(Error::SimulatorFailure(format!("panic at {:?}", job.theta))));
        if done.send(Completion { id: job.id, output, at: Instant::now() }).is_err() {
            break;
        }
    }
}

/// Runs the sequential design against a pool of `w` worker threads.
pub fn run_design(problem: &CalibrationProblem, config: &EngineConfig) -> std::result::Result<DesignTrace, DesignError> {
    config.validate()?;
    let start = Instant::now();
    let secs = |t: Instant| t.duration_since(start).as_secs_f64();
    let rep = config.replicate as u64;

    let init = initial_design(problem, config.n0, derive_seed(config.seeds.init, &[rep]))?;
    let mut trace = DesignTrace { replicate: config.replicate, n0: config.n0, jobs: Vec::new(), stages: Vec::new(), complete: false };
    for (i, s) in init.iter().enumerate() {
        trace.jobs.push(JobRecord {
            job_id: i + 1,
            stage: 0,
            theta: s.theta.clone(),
            output: s.output.expect("evaluated"),
            submit_time: 0.0,
            complete_time: secs(Instant::now()),
            consumed_stage: 0,
        });
    }
    let mut inputs: Vec<Vec<f64>> = init.iter().map(|s| s.theta.clone()).collect();
    let mut outputs: Vec<f64> = init.iter().map(|s| s.output.expect("evaluated")).collect();
    let y = problem.observation();
    let mut delta = BestLoss::from_outputs(y, &outputs);

    let theta_ref = if config.acquisition.needs_reference() {
        sample_uniform_with(problem.space(), config.acquisition.reference_count, &mut stream(config.seeds.rng, &[rep, 2]))
    } else {
        Vec::new()
    };
    let cand_seed = derive_seed(config.seeds.candidates, &[rep]);

    let (job_tx, job_rx) = unbounded::<Job>();
    let (done_tx, done_rx) = unbounded::<Completion>();

    let outcome = thread::scope(|scope| {
        for _ in 0..config.workers {
            let (rx, tx) = (job_rx.clone(), done_tx.clone());
            scope.spawn(move || worker(problem, rx, tx));
        }
        drop(done_tx);
        let result = coordinate(
            problem,
            config,
            &mut trace,
            Coordinator { inputs: &mut inputs, outputs: &mut outputs, delta: &mut delta, theta_ref: &theta_ref, cand_seed, start },
            &job_tx,
            &done_rx,
        );
        drop(job_tx);
        result
    });

    match outcome {
        Ok(()) => {
            trace.complete = true;
            Ok(trace)
        }
        Err(source) => Err(DesignError { source, partial: Some(Box::new(trace)) }),
    }
}

struct Coordinator<'a> {
    inputs: &'a mut Vec<Vec<f64>>,
    outputs: &'a mut Vec<f64>,
    delta: &'a mut BestLoss,
    theta_ref: &'a [Vec<f64>],
    cand_seed: u64,
    start: Instant,
}

fn coordinate(
    problem: &CalibrationProblem,
    config: &EngineConfig,
    trace: &mut DesignTrace,
    state: Coordinator<'_>,
    job_tx: &Sender<Job>,
    done_rx: &Receiver<Completion>,
) -> Result<()> {
    let Coordinator { inputs, outputs, delta, theta_ref, cand_seed, start } = state;
    let secs = |t: Instant| t.duration_since(start).as_secs_f64();
    let rep = config.replicate as u64;
    let y = problem.observation();
    let mut next_id = config.n0 + 1;
    let mut in_flight: BTreeMap<usize, InFlight> = BTreeMap::new();
    let mut arrived: BTreeMap<usize, Completion> = BTreeMap::new();
    let mut submitted = 0usize;
    let mut consumed = 0usize;

    let submit = |theta: Vec<f64>, stage: usize, in_flight: &mut BTreeMap<usize, InFlight>, next_id: &mut usize| {
        let id = *next_id;
        *next_id += 1;
        in_flight.insert(id, InFlight { stage, theta: theta.clone(), submitted: Instant::now() });
        job_tx.send(Job { id, theta }).map_err(|_| pool_closed())
    };

    let mut wave_rng = stream(config.seeds.rng, &[rep, 1]);
    for theta in sample_uniform_with(problem.space(), config.workers, &mut wave_rng) {
        submit(theta, 0, &mut in_flight, &mut next_id)?;
        submitted += 1;
    }

    let mut params: Option<KernelParams> = None;
    let mut t = 0;
    while consumed < config.n {
        t += 1;
        let need = config.batch.min(config.n - consumed);
        let mut taken: Vec<Completion> = Vec::with_capacity(need);
        match config.order {
            CompletionOrder::Earliest => {
                while taken.len() < need {
                    let next = match arrived.pop_first() {
                        Some((_, c)) => c,
                        None => done_rx.recv().map_err(|_| pool_closed())?,
                    };
                    taken.push(next);
                }
            }
            CompletionOrder::Submission => {
                let wanted: Vec<usize> = in_flight.keys().take(need).copied().collect();
                for id in wanted {
                    while !arrived.contains_key(&id) {
                        let c = done_rx.recv().map_err(|_| pool_closed())?;
                        arrived.insert(c.id, c);
                    }
                    taken.push(arrived.remove(&id).expect("present"));
                }
            }
        }
        taken.sort_by_key(|c| c.id);
        for c in taken {
            let job = in_flight.remove(&c.id).expect("consumed job was in flight");
            let output = c.output?;
            trace.jobs.push(JobRecord {
                job_id: c.id,
                stage: job.stage,
                theta: job.theta.clone(),
                output,
                submit_time: secs(job.submitted),
                complete_time: secs(c.at),
                consumed_stage: t,
            });
            inputs.push(job.theta);
            outputs.push(output);
            delta.update(y, output);
            consumed += 1;
        }

        let acq_start = Instant::now();
        let fresh = params.is_none() || t % config.refit_every == 0;
        let fit = FitConfig {
            starts: if fresh { 4 } else { 0 },
            max_iter: if fresh { 60 } else { 10 },
            seed: derive_seed(config.seeds.rng, &[rep, 3, t as u64]),
            warm_start: params.clone(),
        };
        let gp = GpPosterior::fit(inputs, outputs, &fit)?;
        let picks = config.batch.min(config.n - submitted);
        if picks > 0 {
            let batch = build_batch(&config.acquisition, &gp, problem, t, picks, delta.value(), theta_ref, cand_seed)?;
            for theta in batch {
                submit(theta, t, &mut in_flight, &mut next_id)?;
                submitted += 1;
            }
        }
        let acq_time = acq_start.elapsed().as_secs_f64();
        let mad_t = config.mad.as_ref().map(|r| mad(&gp, problem, r));
        params = Some(gp.params().clone());
        trace.stages.push(StageRecord {
            stage: t,
            n_t: consumed,
            submitted,
            pending: in_flight.len(),
            picks,
            acq_time,
            delta: delta.value(),
            mad: mad_t,
            params: gp.params().clone(),
        });
    }
    Ok(())
}

fn pool_closed() -> Error {
    Error::SimulatorFailure("worker pool shut down".into())
}
