//! Evaluation metrics over design and performance traces.

use std::collections::BTreeMap;
use std::fmt;

use crate::engine::DesignTrace;
use crate::gp::GpPosterior;
use crate::perf::{PerfTrace, ProgressCurve};
use crate::problem::CalibrationProblem;
use crate::stats::{median, normal_pdf, quartiles};
use crate::testbed::{true_unnormalized_posterior, TestProblem};
use crate::{Error, Result};

/// Default points per axis of the MAD reference grid.
pub const MAD_GRID: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XUnit {
    Evaluations,
    Seconds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum YUnit {
    Error,
    Time,
    Ratio,
    Hours,
}

impl fmt::Display for XUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            XUnit::Evaluations => "evaluations",
            XUnit::Seconds => "seconds",
        })
    }
}

impl fmt::Display for YUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            YUnit::Error => "error",
            YUnit::Time => "time",
            YUnit::Ratio => "ratio",
            YUnit::Hours => "hours",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesPoint {
    pub x: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

impl SeriesPoint {
    pub fn single(x: f64, y: f64) -> Self {
        SeriesPoint { x, median: y, q1: y, q3: y }
    }
}

/// A curve with strictly increasing `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSeries {
    pub label: String,
    pub x_unit: XUnit,
    pub y_unit: YUnit,
    pub points: Vec<SeriesPoint>,
}

impl MetricSeries {
    pub fn ys(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.median).collect()
    }

    pub fn last(&self) -> Option<f64> {
        self.points.last().map(|p| p.median)
    }

    /// Median and quartiles across replicate series at the x values they all share.
    pub fn aggregate(label: impl Into<String>, series: &[MetricSeries]) -> Result<MetricSeries> {
        let first = series
            .first()
            .ok_or_else(|| Error::InvalidArgument("nothing to aggregate".into()))?;
        let mut by_x: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        for s in series {
            if s.x_unit != first.x_unit || s.y_unit != first.y_unit {
                return Err(Error::InvalidArgument("cannot aggregate series with different units".into()));
            }
            for p in &s.points {
                by_x.entry(p.x.to_bits()).or_default().push(p.median);
            }
        }
        let mut points: Vec<SeriesPoint> = by_x
            .into_iter()
            .filter(|(_, ys)| ys.len() == series.len())
            .map(|(x, ys)| {
                let (q1, med, q3) = quartiles(&ys);
                SeriesPoint { x: f64::from_bits(x), median: med, q1, q3 }
            })
            .collect();
        points.sort_by(|a, b| a.x.total_cmp(&b.x));
        Ok(MetricSeries { label: label.into(), x_unit: first.x_unit, y_unit: first.y_unit, points })
    }
}

/// Running minimum of `|y − η|`, indexed by evaluation count including the initial design.
pub fn delta_series(trace: &DesignTrace, observation: f64) -> MetricSeries {
    let mut best = f64::INFINITY;
    let points = trace
        .losses(observation)
        .into_iter()
        .enumerate()
        .map(|(i, l)| {
            best = best.min(l);
            SeriesPoint::single((i + 1) as f64, best)
        })
        .collect();
    MetricSeries { label: "delta".into(), x_unit: XUnit::Evaluations, y_unit: YUnit::Error, points }
}

/// Reference points and the exact unnormalized posterior at each.
#[derive(Debug, Clone, PartialEq)]
pub struct MadReference {
    pub points: Vec<Vec<f64>>,
    pub truth: Vec<f64>,
}

impl MadReference {
    pub fn grid(test: &TestProblem, per_dim: usize) -> Self {
        let points = test.problem.space().grid(per_dim);
        let truth = points.iter().map(|t| true_unnormalized_posterior(test, t)).collect();
        MadReference { points, truth }
    }
}

/// `f_N(y; m(θ), σ² + s²(θ)) · p(θ)` at each point.
pub fn estimated_posterior(gp: &GpPosterior, problem: &CalibrationProblem, points: &[Vec<f64>]) -> Vec<f64> {
    let (y, s2) = (problem.observation(), problem.noise_var());
    gp.predict_many(points)
        .into_iter()
        .zip(points)
        .map(|(p, theta)| normal_pdf(y, p.mean, s2 + p.var) * problem.prior_density(theta))
        .collect()
}

/// Mean absolute difference between the true and emulated posteriors.
pub fn mad(gp: &GpPosterior, problem: &CalibrationProblem, reference: &MadReference) -> f64 {
    mad_values(&reference.truth, &estimated_posterior(gp, problem, &reference.points))
}

pub fn mad_values(truth: &[f64], estimate: &[f64]) -> f64 {
    assert_eq!(truth.len(), estimate.len(), "MAD inputs differ in length");
    truth.iter().zip(estimate).map(|(a, b)| (a - b).abs()).sum::<f64>() / truth.len() as f64
}

/// MAD after each stage, rebuilding the stage emulators from the trace.
pub fn mad_series(trace: &DesignTrace, test: &TestProblem, reference: &MadReference) -> Result<MetricSeries> {
    let points = trace
        .stages
        .iter()
        .map(|s| {
            let gp = trace.emulator_at(s.stage)?;
            Ok(SeriesPoint::single((trace.n0 + s.n_t) as f64, mad(&gp, &test.problem, reference)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricSeries { label: "mad".into(), x_unit: XUnit::Evaluations, y_unit: YUnit::Error, points })
}

/// Error level against elapsed time: the `j`-th completion time (median over
/// replicates) paired with `error_at(j)`. Equal times keep the last point.
pub fn wallclock_error_curve(traces: &[PerfTrace], curve: &ProgressCurve) -> Result<MetricSeries> {
    let jobs = traces
        .iter()
        .map(PerfTrace::jobs)
        .min()
        .ok_or_else(|| Error::InvalidArgument("no performance traces".into()))?;
    let sorted: Vec<Vec<f64>> = traces
        .iter()
        .map(|t| {
            let mut v = t.job_end.clone();
            v.sort_by(f64::total_cmp);
            v
        })
        .collect();
    let mut points: Vec<SeriesPoint> = Vec::with_capacity(jobs);
    for j in 1..=jobs {
        let x = median(&sorted.iter().map(|v| v[j - 1]).collect::<Vec<_>>());
        let p = SeriesPoint::single(x, curve.error_at(j));
        match points.last_mut() {
            Some(last) if last.x >= x => *last = SeriesPoint { x: last.x, ..p },
            _ => points.push(p),
        }
    }
    Ok(MetricSeries { label: "wallclock".into(), x_unit: XUnit::Seconds, y_unit: YUnit::Error, points })
}

/// Average idle time per worker. A consumed job's worker waits from its
/// completion until the end of the consuming stage; unconsumed jobs wait
/// until the makespan.
pub fn idle_time(trace: &PerfTrace, workers: usize) -> f64 {
    let makespan = trace.makespan();
    let total: f64 = trace
        .job_end
        .iter()
        .zip(&trace.job_consumed)
        .map(|(&end, consumed)| match consumed {
            Some(t) => trace.stage_end[t - 1] - end,
            None => makespan - end,
        })
        .sum();
    total / workers as f64
}

pub fn computing_hours(trace: &PerfTrace, workers: usize) -> f64 {
    workers as f64 * trace.makespan()
}

/// `makespan(baseline, b) / makespan(w, b)`. The baseline is `baseline_w`
/// when given, otherwise the smallest `w` recorded for each `b`.
pub fn speedup(
    makespans: &BTreeMap<(usize, usize), f64>,
    baseline_w: Option<usize>,
) -> Result<BTreeMap<(usize, usize), f64>> {
    let mut base: BTreeMap<usize, f64> = BTreeMap::new();
    for (&(w, b), &m) in makespans {
        match baseline_w {
            Some(bw) if bw == w => {
                base.insert(b, m);
            }
            Some(_) => {}
            None => {
                base.entry(b).or_insert(m);
            }
        }
    }
    makespans
        .iter()
        .map(|(&(w, b), &m)| {
            let reference = base.get(&b).ok_or(Error::MissingBaseline(b))?;
            Ok(((w, b), reference / m))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub batch: usize,
    pub workers: usize,
    pub acq: String,
    pub makespan_median: f64,
    pub speedup: f64,
    pub idle_avg: f64,
    pub compute_hours: f64,
}

/// One row per `(b, w, label)` cell, medians over replicates.
pub fn summarize(
    cells: &[(usize, usize, String, Vec<PerfTrace>)],
    baseline_w: Option<usize>,
) -> Result<Vec<SummaryRow>> {
    let mut makespans = BTreeMap::new();
    for (b, w, _, traces) in cells {
        let m = median(&traces.iter().map(PerfTrace::makespan).collect::<Vec<_>>());
        makespans.insert((*w, *b), m);
    }
    let ratios = speedup(&makespans, baseline_w)?;
    Ok(cells
        .iter()
        .map(|(b, w, label, traces)| SummaryRow {
            batch: *b,
            workers: *w,
            acq: label.clone(),
            makespan_median: makespans[&(*w, *b)],
            speedup: ratios[&(*w, *b)],
            idle_avg: median(&traces.iter().map(|t| idle_time(t, *w)).collect::<Vec<_>>()),
            compute_hours: median(&traces.iter().map(|t| computing_hours(t, *w)).collect::<Vec<_>>()),
        })
        .collect())
}
