//! Independent reference implementations shared by the integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use parcal::perf::{sample_runtime, AcqTimeKind, AcqTimeModel, PerfScenario, PerfTrace};

/// Matérn-3/2 covariance written out per dimension.
pub fn matern(a: &[f64], b: &[f64], log_ls: &[f64], scale: f64) -> f64 {
    let mut c = scale;
    for i in 0..a.len() {
        let r = (a[i] - b[i]).abs() * log_ls[i].exp();
        c *= (1.0 + r) * (-r).exp();
    }
    c
}

/// Solves `A x = rhs` by Gaussian elimination with partial pivoting.
pub fn gauss_solve(a: &[Vec<f64>], rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    let mut m: Vec<Vec<f64>> = a.iter().zip(rhs).map(|(row, r)| {
        let mut row = row.clone();
        row.push(*r);
        row
    }).collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs())).unwrap();
        m.swap(col, piv);
        for r in col + 1..n {
            let f = m[r][col] / m[col][col];
            for c in col..=n {
                m[r][c] -= f * m[col][c];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| m[r][c] * x[c]).sum();
        x[r] = (m[r][n] - s) / m[r][r];
    }
    x
}

/// Brute-force GP posterior: builds `K + υI` and solves it densely per query.
pub struct DenseGp {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub log_ls: Vec<f64>,
    pub scale: f64,
    pub nugget: f64,
    pub center: f64,
}

impl DenseGp {
    fn gram(&self) -> Vec<Vec<f64>> {
        let n = self.x.len();
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| matern(&self.x[i], &self.x[j], &self.log_ls, self.scale) + if i == j { self.nugget } else { 0.0 })
                    .collect()
            })
            .collect()
    }

    fn kvec(&self, t: &[f64]) -> Vec<f64> {
        self.x.iter().map(|xi| matern(t, xi, &self.log_ls, self.scale)).collect()
    }

    pub fn mean(&self, t: &[f64]) -> f64 {
        let centered: Vec<f64> = self.y.iter().map(|v| v - self.center).collect();
        let alpha = gauss_solve(&self.gram(), &centered);
        self.center + self.kvec(t).iter().zip(&alpha).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn cov(&self, a: &[f64], b: &[f64]) -> f64 {
        let kb = gauss_solve(&self.gram(), &self.kvec(b));
        matern(a, b, &self.log_ls, self.scale) - self.kvec(a).iter().zip(&kb).map(|(p, q)| p * q).sum::<f64>()
    }
}

/// Standard normal quantile by bisection on the CDF.
pub fn normal_quantile(p: f64) -> f64 {
    let cdf = |x: f64| 0.5 * libm::erfc(-x / std::f64::consts::SQRT_2);
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Acquisition time of one stage, recomputed from the model definition.
pub fn stage_acq(model: &AcqTimeModel, b: usize, t: usize, n: usize) -> f64 {
    match model {
        AcqTimeModel::Formula { kind, a, b: lin, c, tail } => {
            let f = |j: usize| {
                let x = j as f64 / n as f64;
                let v = match kind {
                    AcqTimeKind::Constant => *a,
                    AcqTimeKind::Linear => a + lin * x,
                    AcqTimeKind::Quadratic => a + lin * x + c * x * x,
                };
                v.max(0.0)
            };
            let first = b * (t - 1) + 1;
            let rest = match tail {
                Some(v) => (b - 1) as f64 * v,
                None => (first + 1..first + b).map(f).sum(),
            };
            f(first) + rest
        }
        AcqTimeModel::Measured(v) => {
            if t <= v.len() {
                v[t - 1]
            } else {
                v.iter().sum::<f64>() / v.len() as f64
            }
        }
    }
}

/// Event simulator that keeps the pending set as a plain list and re-sorts it
/// every stage.
pub fn reference_simulate(s: &PerfScenario, rep: usize) -> (Vec<f64>, Vec<f64>) {
    let draw = |j: usize| sample_runtime(s.run_time, s.seed, rep as u64, j as u64);
    let mut ends: Vec<f64> = (1..=s.workers).map(draw).collect();
    let mut pending: Vec<usize> = (1..=s.workers).collect();
    let mut stage_ends = Vec::new();
    let mut prev = 0.0_f64;
    let mut created = s.workers;
    let mut t = 0;
    while created < s.n_k {
        t += 1;
        pending.sort_by(|&i, &j| ends[i - 1].total_cmp(&ends[j - 1]).then(i.cmp(&j)));
        let taken: Vec<usize> = pending.drain(..s.batch).collect();
        let bth = ends[*taken.last().unwrap() - 1];
        let c = if bth > prev { bth } else { prev } + stage_acq(&s.acq_time, s.batch, t, s.budget);
        for _ in 0..s.batch {
            created += 1;
            ends.push(c + draw(created));
            pending.push(created);
        }
        stage_ends.push(c);
        prev = c;
    }
    (ends, stage_ends)
}

/// `pending` after each stage equals jobs created minus jobs consumed so far.
pub fn pending_conserved(trace: &PerfTrace, workers: usize) -> bool {
    (0..trace.stages()).all(|t| {
        let consumed = trace.job_consumed.iter().filter(|c| c.is_some_and(|s| s <= t + 1)).count();
        let created = workers + trace.job_created.iter().filter(|&&c| c >= 1 && c <= t + 1).count();
        trace.pending[t] == created - consumed && trace.pending[t] == workers
    })
}
