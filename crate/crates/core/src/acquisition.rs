//! Acquisition functions for calibration and batch construction.
//!
//! Every criterion is expressed so that smaller is better:
//! PI is negated, EI uses the expected unimprovement directly, EIVAR is the
//! expected integrated posterior variance, and RND ignores the emulator.

use crate::gp::{GpPosterior, Prediction};
use crate::problem::{sample_uniform_with, CalibrationProblem};
use crate::stats::{normal_pdf, std_normal_cdf, std_normal_pdf};
use crate::{rng, Error, Result};
use nalgebra::DMatrix;
use rand::Rng;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

/// Floor below which `σ² + s² - τ²` counts as zero in the EIVAR summand.
pub const EIVAR_DENOM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AcquisitionKind {
    Pi,
    Ei,
    Eivar,
    Hybrid,
    Rnd,
}

impl AcquisitionKind {
    pub const ALL: [AcquisitionKind; 5] = [Self::Pi, Self::Ei, Self::Eivar, Self::Hybrid, Self::Rnd];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Pi => "pi",
            Self::Ei => "ei",
            Self::Eivar => "eivar",
            Self::Hybrid => "hybrid",
            Self::Rnd => "rnd",
        }
    }
}

impl fmt::Display for AcquisitionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AcquisitionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown acquisition `{s}` (expected pi, ei, eivar, hybrid or rnd)")))
    }
}

/// Which stage parity runs EIVAR under HYBRID.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HybridOrder {
    #[default]
    EivarOnEven,
    EivarOnOdd,
}

impl FromStr for HybridOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eivar-even" => Ok(Self::EivarOnEven),
            "eivar-odd" => Ok(Self::EivarOnOdd),
            _ => Err(Error::InvalidArgument(format!("unknown hybrid order `{s}` (expected eivar-even or eivar-odd)"))),
        }
    }
}

impl fmt::Display for HybridOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::EivarOnEven => "eivar-even",
            Self::EivarOnOdd => "eivar-odd",
        })
    }
}

/// Output imputed for pending picks while a batch is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LiarRule {
    #[default]
    Mean,
    Min,
    Max,
}

impl LiarRule {
    pub fn value(self, outputs: &[f64]) -> f64 {
        match self {
            Self::Mean => outputs.iter().sum::<f64>() / outputs.len() as f64,
            Self::Min => outputs.iter().copied().fold(f64::INFINITY, f64::min),
            Self::Max => outputs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

impl FromStr for LiarRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" | "mean-output" => Ok(Self::Mean),
            "min" | "min-output" => Ok(Self::Min),
            "max" | "max-output" => Ok(Self::Max),
            _ => Err(Error::InvalidArgument(format!("unknown liar rule `{s}` (expected mean, min or max)"))),
        }
    }
}

impl fmt::Display for LiarRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Mean => "mean",
            Self::Min => "min",
            Self::Max => "max",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionSpec {
    pub kind: AcquisitionKind,
    /// `|L_t|`, fresh uniform candidates per pick.
    pub candidate_count: usize,
    /// `|Θ_ref|` for EIVAR.
    pub reference_count: usize,
    pub hybrid_order: HybridOrder,
    pub liar: LiarRule,
}

impl AcquisitionSpec {
    pub fn new(kind: AcquisitionKind) -> Self {
        Self { kind, candidate_count: 1000, reference_count: 1000, hybrid_order: HybridOrder::default(), liar: LiarRule::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.candidate_count == 0 {
            return Err(Error::InvalidArgument("candidate count must be at least 1".into()));
        }
        if self.reference_count == 0 {
            return Err(Error::InvalidArgument("reference count must be at least 1".into()));
        }
        Ok(())
    }

    pub fn needs_reference(&self) -> bool {
        matches!(self.kind, AcquisitionKind::Eivar | AcquisitionKind::Hybrid)
    }
}

/// `δ_t`: the smallest `|y - η(θ_j)|` over evaluated samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BestLoss(f64);

impl BestLoss {
    pub fn from_outputs(observation: f64, outputs: &[f64]) -> Self {
        Self(outputs.iter().map(|o| (observation - o).abs()).fold(f64::INFINITY, f64::min))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn update(&mut self, observation: f64, output: f64) {
        self.0 = self.0.min((observation - output).abs());
    }
}

/// Criterion actually evaluated at a given pick.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    Pi,
    Ei,
    Eivar,
    Rnd,
}

/// HYBRID alternation: EIVAR on the stages with the configured parity.
pub fn hybrid_dispatch(stage: usize, order: HybridOrder) -> Criterion {
    let even = stage.is_multiple_of(2);
    match (order, even) {
        (HybridOrder::EivarOnEven, true) | (HybridOrder::EivarOnOdd, false) => Criterion::Eivar,
        _ => Criterion::Ei,
    }
}

pub fn criterion_for(spec: &AcquisitionSpec, stage: usize) -> Criterion {
    match spec.kind {
        AcquisitionKind::Pi => Criterion::Pi,
        AcquisitionKind::Ei => Criterion::Ei,
        AcquisitionKind::Eivar => Criterion::Eivar,
        AcquisitionKind::Rnd => Criterion::Rnd,
        AcquisitionKind::Hybrid => hybrid_dispatch(stage, spec.hybrid_order),
    }
}

/// `E[P(|ε*| ≤ δ)]` with `ε* = y - η(θ*) + ε` and `η(θ*) ~ N(m, s²)`.
pub fn pi_closed_form(pred: Prediction, observation: f64, noise_var: f64, delta: f64) -> f64 {
    let u = (noise_var + pred.var).sqrt();
    let d = observation - pred.mean;
    (std_normal_cdf((delta - d) / u) - std_normal_cdf((-delta - d) / u)).clamp(0.0, 1.0)
}

/// `E[max(ε* - δ, 0)] + E[max(-ε* - δ, 0)]`.
pub fn unimprovement_closed_form(pred: Prediction, observation: f64, noise_var: f64, delta: f64) -> f64 {
    let u = (noise_var + pred.var).sqrt();
    let d = observation - pred.mean;
    let upper = (delta - d) / u;
    let lower = (-delta - d) / u;
    // 1 - Φ(x) is evaluated as Φ(-x) to keep the upper tail accurate.
    let value = (d - delta) * std_normal_cdf(-upper)
        + u * std_normal_pdf(upper)
        + (-delta - d) * std_normal_cdf(lower)
        + u * std_normal_pdf(lower);
    value.max(0.0)
}

pub fn prob_improvement(gp: &GpPosterior, problem: &CalibrationProblem, theta_star: &[f64], delta: f64) -> f64 {
    pi_closed_form(gp.predict(theta_star), problem.observation(), problem.noise_var(), delta)
}

pub fn expected_unimprovement(gp: &GpPosterior, problem: &CalibrationProblem, theta_star: &[f64], delta: f64) -> f64 {
    unimprovement_closed_form(gp.predict(theta_star), problem.observation(), problem.noise_var(), delta)
}

/// One reference point's contribution to EIVAR: the expected variance of
/// `p̃(θ|y)` after a hypothetical evaluation that reduces the emulator
/// variance at `θ` by `tau2`.
pub fn eivar_summand(pred: Prediction, tau2: f64, prior: f64, observation: f64, noise_var: f64) -> f64 {
    let sigma = noise_var.sqrt();
    let norm = 2.0 * PI.sqrt();
    let first = normal_pdf(observation, pred.mean, 0.5 * noise_var + pred.var) / (norm * sigma);
    let denom = (noise_var + pred.var - tau2).abs();
    let second = if denom < EIVAR_DENOM_FLOOR {
        0.0
    } else {
        normal_pdf(observation, pred.mean, 0.5 * (noise_var + pred.var + tau2)) / (norm * denom.sqrt())
    };
    prior * prior * (first - second)
}

/// EIVAR of a single candidate, averaged over `theta_ref`.
pub fn eivar(gp: &GpPosterior, problem: &CalibrationProblem, theta_star: &[f64], theta_ref: &[Vec<f64>]) -> f64 {
    assert!(!theta_ref.is_empty(), "EIVAR needs a non-empty reference set");
    let star_var = gp.predict(theta_star).var + gp.params().nugget;
    theta_ref
        .iter()
        .map(|theta| {
            let cov = gp.posterior_cov(theta, theta_star);
            eivar_summand(gp.predict(theta), cov * cov / star_var, problem.prior_density(theta), problem.observation(), problem.noise_var())
        })
        .sum::<f64>()
        / theta_ref.len() as f64
}

/// Reference-set quantities reused across all candidates of one pick.
pub struct EivarReference<'a> {
    gp: &'a GpPosterior,
    points: &'a [Vec<f64>],
    preds: Vec<Prediction>,
    priors: Vec<f64>,
    /// `L⁻¹ K(X, Θ_ref)`
    solved: DMatrix<f64>,
}

impl<'a> EivarReference<'a> {
    pub fn new(gp: &'a GpPosterior, problem: &CalibrationProblem, points: &'a [Vec<f64>]) -> Self {
        assert!(!points.is_empty(), "EIVAR needs a non-empty reference set");
        let (preds, solved) = gp.predict_many_solved(points);
        let priors = points.iter().map(|p| problem.prior_density(p)).collect();
        Self { gp, points, preds, priors, solved }
    }

    /// EIVAR for every candidate.
    pub fn values(&self, problem: &CalibrationProblem, candidates: &[Vec<f64>]) -> Vec<f64> {
        let gp = self.gp;
        let nugget = gp.params().nugget;
        let (cand_preds, cand_solved) = gp.predict_many_solved(candidates);
        // cov(r, c) = k(r, c) - v_rᵀ v_c
        let mut cov = self.solved.tr_mul(&cand_solved);
        for c in 0..candidates.len() {
            for (r, point) in self.points.iter().enumerate() {
                cov[(r, c)] = gp.kernel(point, &candidates[c]) - cov[(r, c)];
            }
        }
        let (y, s2) = (problem.observation(), problem.noise_var());
        (0..candidates.len())
            .map(|c| {
                let star_var = cand_preds[c].var + nugget;
                let total: f64 = (0..self.points.len())
                    .map(|r| {
                        let cv = cov[(r, c)];
                        eivar_summand(self.preds[r], cv * cv / star_var, self.priors[r], y, s2)
                    })
                    .sum();
                total / self.points.len() as f64
            })
            .collect()
    }
}

/// Index of the best candidate (smallest acquisition value, lowest index on
/// ties). `rng` is consumed only by RND.
#[allow(clippy::too_many_arguments)]
pub fn score_candidates<R: Rng + ?Sized>(
    spec: &AcquisitionSpec,
    gp: &GpPosterior,
    problem: &CalibrationProblem,
    stage: usize,
    candidates: &[Vec<f64>],
    delta: f64,
    theta_ref: &[Vec<f64>],
    rng: &mut R,
) -> usize {
    assert!(!candidates.is_empty(), "no candidates to score");
    let values = acquisition_values(criterion_for(spec, stage), gp, problem, candidates, delta, theta_ref);
    match values {
        None => rng.random_range(0..candidates.len()),
        Some(values) => argmin(&values),
    }
}

/// Acquisition values to minimize, or `None` for RND.
pub fn acquisition_values(
    criterion: Criterion,
    gp: &GpPosterior,
    problem: &CalibrationProblem,
    candidates: &[Vec<f64>],
    delta: f64,
    theta_ref: &[Vec<f64>],
) -> Option<Vec<f64>> {
    let (y, s2) = (problem.observation(), problem.noise_var());
    match criterion {
        Criterion::Rnd => None,
        Criterion::Pi => Some(gp.predict_many(candidates).into_iter().map(|p| -pi_closed_form(p, y, s2, delta)).collect()),
        Criterion::Ei => Some(gp.predict_many(candidates).into_iter().map(|p| unimprovement_closed_form(p, y, s2, delta)).collect()),
        Criterion::Eivar => Some(EivarReference::new(gp, problem, theta_ref).values(problem, candidates)),
    }
}

/// First index of the minimum; NaN never wins.
pub fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    let mut best_value = f64::INFINITY;
    for (i, &v) in values.iter().enumerate() {
        if v < best_value {
            best = i;
            best_value = v;
        }
    }
    best
}

/// The candidate stream used for pick `pick` of stage `stage`.
pub fn pick_stream(seed: u64, stage: usize, pick: usize) -> rand_chacha::ChaCha8Rng {
    rng::stream(seed, &[stage as u64, pick as u64])
}

/// Constant-liar batch: `b` sequential picks, each over fresh uniform
/// candidates, with the working emulator conditioned on the liar value at
/// every earlier pick (hyperparameters frozen).
#[allow(clippy::too_many_arguments)]
pub fn build_batch(
    spec: &AcquisitionSpec,
    gp: &GpPosterior,
    problem: &CalibrationProblem,
    stage: usize,
    batch_size: usize,
    delta: f64,
    theta_ref: &[Vec<f64>],
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    spec.validate()?;
    let liar = spec.liar.value(gp.outputs());
    let criterion = criterion_for(spec, stage);
    let mut working: Option<GpPosterior> = None;
    let mut batch = Vec::with_capacity(batch_size);
    for pick in 0..batch_size {
        let mut rng = pick_stream(seed, stage, pick);
        let candidates = sample_uniform_with(problem.space(), spec.candidate_count, &mut rng);
        let current = working.as_ref().unwrap_or(gp);
        let index = match acquisition_values(criterion, current, problem, &candidates, delta, theta_ref) {
            None => rng.random_range(0..candidates.len()),
            Some(values) => argmin(&values),
        };
        let chosen = candidates[index].clone();
        if criterion != Criterion::Rnd && pick + 1 < batch_size {
            working = Some(current.with_appended(&chosen, liar)?);
        }
        batch.push(chosen);
    }
    Ok(batch)
}
