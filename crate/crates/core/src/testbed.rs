//! Synthetic calibration problems on two-dimensional boxes.

use std::f64::consts::{E, PI};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::problem::{CalibrationProblem, ParameterSpace, Simulator};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TestFunction {
    Himmelblau,
    Holder,
    Easom,
    Sphere,
    Matyas,
    Ackley,
}

impl TestFunction {
    pub const ALL: [TestFunction; 6] = [
        TestFunction::Himmelblau,
        TestFunction::Holder,
        TestFunction::Easom,
        TestFunction::Sphere,
        TestFunction::Matyas,
        TestFunction::Ackley,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TestFunction::Himmelblau => "himmelblau",
            TestFunction::Holder => "holder",
            TestFunction::Easom => "easom",
            TestFunction::Sphere => "sphere",
            TestFunction::Matyas => "matyas",
            TestFunction::Ackley => "ackley",
        }
    }

    /// Symmetric box half-width.
    pub fn half_width(self) -> f64 {
        match self {
            TestFunction::Himmelblau | TestFunction::Sphere | TestFunction::Ackley => 5.0,
            TestFunction::Holder | TestFunction::Easom | TestFunction::Matyas => 10.0,
        }
    }

    pub fn observation(self) -> f64 {
        match self {
            TestFunction::Himmelblau => 1.0,
            TestFunction::Holder => -19.2085,
            TestFunction::Easom => -1.0,
            TestFunction::Sphere | TestFunction::Matyas | TestFunction::Ackley => 0.0,
        }
    }

    pub fn noise_var(self) -> f64 {
        match self {
            TestFunction::Himmelblau => 1.0,
            TestFunction::Holder => 50.0,
            _ => 10.0,
        }
    }

    pub fn eval(self, theta: &[f64]) -> f64 {
        let (x, y) = (theta[0], theta[1]);
        match self {
            TestFunction::Himmelblau => himmelblau(x, y),
            TestFunction::Holder => holder(x, y),
            TestFunction::Easom => easom(x, y),
            TestFunction::Sphere => x * x + y * y,
            TestFunction::Matyas => 0.26 * (x * x + y * y) - 0.48 * x * y,
            TestFunction::Ackley => ackley(x, y),
        }
    }
}

impl fmt::Display for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TestFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        TestFunction::ALL
            .into_iter()
            .find(|f| f.name() == key || (key == "hölder" && *f == TestFunction::Holder))
            .ok_or_else(|| Error::UnknownProblem(s.to_string()))
    }
}

pub fn himmelblau(x: f64, y: f64) -> f64 {
    (x * x + y - 11.0).powi(2) + (x + y * y - 7.0).powi(2)
}

pub fn holder(x: f64, y: f64) -> f64 {
    let r = (x * x + y * y).sqrt();
    -(x.sin() * y.cos() * (1.0 - r / PI).abs().exp()).abs()
}

pub fn easom(x: f64, y: f64) -> f64 {
    -x.cos() * y.cos() * (-((x - PI).powi(2) + (y - PI).powi(2))).exp()
}

pub fn ackley(x: f64, y: f64) -> f64 {
    -20.0 * (-0.2 * (0.5 * (x * x + y * y)).sqrt()).exp()
        - (0.5 * ((2.0 * PI * x).cos() + (2.0 * PI * y).cos())).exp()
        + E
        + 20.0
}

/// A named test function bundled with its calibration problem.
#[derive(Clone)]
pub struct TestProblem {
    pub function: TestFunction,
    pub problem: CalibrationProblem,
}

impl TestProblem {
    pub fn new(function: TestFunction) -> Self {
        let h = function.half_width();
        let space = ParameterSpace::cube(2, -h, h).expect("static box");
        let sim: Simulator = Arc::new(move |t: &[f64]| function.eval(t));
        let problem = CalibrationProblem::new(space, sim, function.observation(), function.noise_var())
            .expect("static problem");
        TestProblem { function, problem }
    }

    pub fn name(&self) -> &'static str {
        self.function.name()
    }
}

impl fmt::Debug for TestProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestProblem").field("function", &self.function).finish()
    }
}

pub fn make(name: &str) -> Result<TestProblem> {
    Ok(TestProblem::new(name.parse()?))
}

/// Unnormalized posterior using the exact simulator; zero outside the box.
pub fn true_unnormalized_posterior(test: &TestProblem, theta: &[f64]) -> f64 {
    let p = &test.problem;
    if !p.space().contains(theta) {
        return 0.0;
    }
    p.unnormalized_posterior(theta, test.function.eval(theta))
}

/// Number of separate high-posterior regions: 8-connected components of
/// `{p̃ ≥ level · max p̃}` on a `per_dim × per_dim` grid.
pub fn high_posterior_regions(test: &TestProblem, per_dim: usize, level: f64) -> usize {
    let grid = test.problem.space().grid(per_dim);
    let dens: Vec<f64> = grid.iter().map(|t| true_unnormalized_posterior(test, t)).collect();
    let peak = dens.iter().cloned().fold(0.0, f64::max);
    let high: Vec<bool> = dens.iter().map(|&d| d >= level * peak).collect();
    let mut seen = vec![false; high.len()];
    let mut regions = 0;
    let mut stack = Vec::new();
    for start in 0..high.len() {
        if !high[start] || seen[start] {
            continue;
        }
        regions += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(k) = stack.pop() {
            let (i, j) = ((k / per_dim) as isize, (k % per_dim) as isize);
            for di in -1..=1 {
                for dj in -1..=1 {
                    let (ni, nj) = (i + di, j + dj);
                    if ni < 0 || nj < 0 || ni >= per_dim as isize || nj >= per_dim as isize {
                        continue;
                    }
                    let nk = ni as usize * per_dim + nj as usize;
                    if high[nk] && !seen[nk] {
                        seen[nk] = true;
                        stack.push(nk);
                    }
                }
            }
        }
    }
    regions
}
