//! Calibration problems: parameter boxes, uniform priors and the
//! unnormalized posterior `p(y | θ) p(θ)` under a Gaussian observation model.

use crate::{rng, Error, Result};
use rand::Rng;
use std::fmt;
use std::sync::Arc;

/// A deterministic scalar simulator `θ ↦ η(θ)`, callable from many threads.
pub type Simulator = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// An axis-aligned box `Θ ⊂ R^p`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSpace {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ParameterSpace {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::InvalidArgument("parameter space needs at least one dimension".into()));
        }
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch { expected: lower.len(), actual: upper.len() });
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidArgument(format!(
                    "bounds of dimension {i} must satisfy lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The cube `[lo, hi]^dims`.
    pub fn cube(dims: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dims], vec![hi; dims])
    }

    pub fn dims(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(lo, hi)| hi - lo).collect()
    }

    pub fn volume(&self) -> f64 {
        self.widths().iter().product()
    }

    /// Closed-box membership; a vector of the wrong length is never inside.
    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dims()
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (lo, hi))| *lo <= *x && *x <= *hi)
    }

    /// One uniform draw from the box.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
            .collect()
    }

    /// Regular grid with `per_dim` points per axis, endpoints included,
    /// first coordinate varying slowest.
    pub fn grid(&self, per_dim: usize) -> Vec<Vec<f64>> {
        assert!(per_dim >= 2, "grid needs at least two points per dimension");
        let axes: Vec<Vec<f64>> = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| (0..per_dim).map(|i| lo + (hi - lo) * i as f64 / (per_dim - 1) as f64).collect())
            .collect();
        let mut points = vec![Vec::with_capacity(self.dims())];
        for axis in &axes {
            points = points
                .into_iter()
                .flat_map(|prefix| {
                    axis.iter().map(move |&x| {
                        let mut p = prefix.clone();
                        p.push(x);
                        p
                    })
                })
                .collect();
        }
        points
    }
}

/// `count` i.i.d. uniform draws from `space`, determined by `seed`.
pub fn sample_uniform(space: &ParameterSpace, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng::stream(seed, &[]);
    sample_uniform_with(space, count, &mut rng)
}

pub fn sample_uniform_with<R: Rng + ?Sized>(space: &ParameterSpace, count: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..count).map(|_| space.draw(rng)).collect()
}

/// A parameter vector and, once evaluated, its simulator output.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub theta: Vec<f64>,
    pub output: Option<f64>,
}

impl Sample {
    pub fn evaluated(theta: Vec<f64>, output: f64) -> Self {
        Self { theta, output: Some(output) }
    }
}

/// Observation `y = η(θ) + ε`, `ε ~ N(0, σ²)`, with a uniform prior on a box.
#[derive(Clone)]
pub struct CalibrationProblem {
    space: ParameterSpace,
    simulator: Simulator,
    observation: f64,
    noise_var: f64,
}

impl fmt::Debug for CalibrationProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CalibrationProblem")
            .field("space", &self.space)
            .field("observation", &self.observation)
            .field("noise_var", &self.noise_var)
            .finish_non_exhaustive()
    }
}

impl CalibrationProblem {
    pub fn new(space: ParameterSpace, simulator: Simulator, observation: f64, noise_var: f64) -> Result<Self> {
        if !(noise_var > 0.0 && noise_var.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise variance must be positive, got {noise_var}")));
        }
        if !observation.is_finite() {
            return Err(Error::InvalidArgument("observation must be finite".into()));
        }
        Ok(Self { space, simulator, observation, noise_var })
    }

    pub fn space(&self) -> &ParameterSpace {
        &self.space
    }

    pub fn observation(&self) -> f64 {
        self.observation
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn simulator(&self) -> &Simulator {
        &self.simulator
    }

    /// Runs the simulator; a non-finite output is an error.
    pub fn evaluate(&self, theta: &[f64]) -> Result<f64> {
        let value = (self.simulator)(theta);
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::Evaluation { theta: theta.to_vec(), value })
        }
    }

    /// Uniform prior density: `1 / vol(Θ)` inside the box, 0 outside.
    pub fn prior_density(&self, theta: &[f64]) -> f64 {
        if self.space.contains(theta) {
            1.0 / self.space.volume()
        } else {
            0.0
        }
    }

    pub fn log_prior(&self, theta: &[f64]) -> f64 {
        if self.space.contains(theta) {
            -self.space.volume().ln()
        } else {
            f64::NEG_INFINITY
        }
    }

    /// Likelihood of `y` given simulator output `eta`, times the prior at `theta`.
    pub fn unnormalized_posterior(&self, theta: &[f64], eta: f64) -> f64 {
        let prior = self.prior_density(theta);
        if prior == 0.0 {
            return 0.0;
        }
        crate::stats::normal_pdf(self.observation, eta, self.noise_var) * prior
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn problem(space: ParameterSpace, y: f64, s2: f64) -> CalibrationProblem {
        CalibrationProblem::new(space, Arc::new(|t: &[f64]| t.iter().sum()), y, s2).unwrap()
    }

    #[test]
    fn rejects_bad_boxes() {
        assert!(ParameterSpace::new(vec![], vec![]).is_err());
        assert!(ParameterSpace::new(vec![1.0], vec![1.0]).is_err());
        assert!(ParameterSpace::new(vec![0.0, 0.0], vec![1.0]).is_err());
        assert!(CalibrationProblem::new(ParameterSpace::cube(1, 0.0, 1.0).unwrap(), Arc::new(|_: &[f64]| 0.0), 0.0, 0.0).is_err());
    }

    #[test]
    fn uniform_samples_in_box_and_reproducible() {
        let space = ParameterSpace::cube(2, 0.0, 1.0).unwrap();
        let a = sample_uniform(&space, 3, 11);
        assert_eq!(a.len(), 3);
        assert!(a.iter().all(|t| space.contains(t)));
        assert_eq!(a, sample_uniform(&space, 3, 11));
        assert_ne!(a, sample_uniform(&space, 3, 12));
    }

    #[test]
    fn hundred_thousand_draws_stay_inside() {
        let space = ParameterSpace::new(vec![-3.0, 10.0, 0.0], vec![-2.5, 20.0, 1e-3]).unwrap();
        assert!(sample_uniform(&space, 100_000, 5).iter().all(|t| space.contains(t)));
    }

    #[test]
    fn sample_mean_concentrates() {
        // Var of U(-5,5) is 100/12; the standard error of a 10^4 mean is ~0.029,
        // so 0.15 is a 5-sigma band.
        let space = ParameterSpace::cube(2, -5.0, 5.0).unwrap();
        let draws = sample_uniform(&space, 10_000, 99);
        for d in 0..2 {
            let mean = draws.iter().map(|t| t[d]).sum::<f64>() / draws.len() as f64;
            assert!(mean.abs() < 0.15, "dimension {d} mean {mean}");
        }
    }

    #[test]
    fn log_prior_values() {
        let unit = problem(ParameterSpace::cube(2, 0.0, 1.0).unwrap(), 0.0, 1.0);
        assert_eq!(unit.log_prior(&[0.5, 0.5]), 0.0);
        assert_eq!(unit.log_prior(&[2.0, 0.0]), f64::NEG_INFINITY);
        let two = problem(ParameterSpace::cube(2, 0.0, 2.0).unwrap(), 0.0, 1.0);
        assert_relative_eq!(two.log_prior(&[1.0, 1.0]), -(4.0f64).ln());
    }

    #[test]
    fn posterior_values() {
        let unit = problem(ParameterSpace::cube(2, 0.0, 1.0).unwrap(), 0.0, 1.0);
        assert_relative_eq!(unit.unnormalized_posterior(&[0.5, 0.5], 0.0), 1.0 / (2.0 * PI).sqrt(), epsilon = 1e-15);
        assert_eq!(unit.unnormalized_posterior(&[1.5, 0.5], 0.0), 0.0);
        let shifted = problem(ParameterSpace::cube(2, 0.0, 1.0).unwrap(), 1.0, 1.0);
        assert_relative_eq!(shifted.unnormalized_posterior(&[0.5, 0.5], 0.0), 0.241_970_724_519_143_37, epsilon = 1e-15);
    }

    #[test]
    fn posterior_peaks_at_observation() {
        let p = problem(ParameterSpace::cube(1, 0.0, 1.0).unwrap(), 0.7, 0.3);
        let theta = [0.2];
        let best = (-400..=400)
            .map(|i| 0.7 + i as f64 * 0.005)
            .max_by(|a, b| p.unnormalized_posterior(&theta, *a).total_cmp(&p.unnormalized_posterior(&theta, *b)))
            .unwrap();
        assert_relative_eq!(best, 0.7, epsilon = 1e-12);
    }

    #[test]
    fn prior_integrates_to_one() {
        // Halton points in base 2 and 3.
        fn radical_inverse(mut i: u64, base: u64) -> f64 {
            let (mut f, mut r) = (1.0, 0.0);
            while i > 0 {
                f /= base as f64;
                r += f * (i % base) as f64;
                i /= base;
            }
            r
        }
        let p = problem(ParameterSpace::new(vec![-1.0, 2.0], vec![3.0, 2.5]).unwrap(), 0.0, 1.0);
        // Integrate over an enclosing box twice the size in each dimension.
        let (lo, hi) = ([-3.0, 1.75], [5.0, 2.75]);
        let vol = (hi[0] - lo[0]) * (hi[1] - lo[1]);
        let n = 20_000;
        let sum: f64 = (1..=n)
            .map(|i| {
                let t = [lo[0] + (hi[0] - lo[0]) * radical_inverse(i, 2), lo[1] + (hi[1] - lo[1]) * radical_inverse(i, 3)];
                p.log_prior(&t).exp()
            })
            .sum();
        let integral = vol * sum / n as f64;
        assert!((integral - 1.0).abs() < 0.01, "integral {integral}");
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let p = CalibrationProblem::new(ParameterSpace::cube(1, 0.0, 1.0).unwrap(), Arc::new(|_: &[f64]| f64::NAN), 0.0, 1.0).unwrap();
        assert!(matches!(p.evaluate(&[0.5]), Err(Error::Evaluation { .. })));
    }

    #[test]
    fn grid_covers_corners() {
        let g = ParameterSpace::cube(2, 0.0, 1.0).unwrap().grid(3);
        assert_eq!(g.len(), 9);
        assert_eq!(g[0], vec![0.0, 0.0]);
        assert_eq!(g[8], vec![1.0, 1.0]);
        assert_eq!(g[1], vec![0.0, 0.5]);
    }
}
