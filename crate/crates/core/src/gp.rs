//! Zero-mean Gaussian process emulator with a separable Matérn-3/2 kernel
//! `k(θ, θ') = τ² ∏_l (1 + r_l) exp(-Σ_l r_l)`, `r_l = |θ_l - θ'_l| e^{ζ_l}`,
//! plus a nugget `υ` on the diagonal of the training covariance.
//!
//! Outputs are centered by their sample mean before fitting. Hyperparameters
//! `(ζ, ln τ², ln υ)` maximize the log marginal likelihood with a projected
//! BFGS search from several starting points.

use crate::problem::Sample;
use crate::{rng, Error, Result};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use std::f64::consts::PI;

/// Smallest nugget relative to the scale, `υ ≥ 1e-8 τ²`.
pub const NUGGET_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct KernelParams {
    /// `ζ_l`; the inverse lengthscale of dimension `l` is `exp(ζ_l)`.
    pub log_lengthscales: Vec<f64>,
    /// `τ²`
    pub scale: f64,
    /// `υ`
    pub nugget: f64,
}

impl KernelParams {
    pub fn new(log_lengthscales: Vec<f64>, scale: f64, nugget: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidArgument(format!("kernel scale must be positive, got {scale}")));
        }
        if !(nugget > 0.0 && nugget.is_finite()) {
            return Err(Error::InvalidArgument(format!("nugget must be positive, got {nugget}")));
        }
        if log_lengthscales.is_empty() || log_lengthscales.iter().any(|z| !z.is_finite()) {
            return Err(Error::InvalidArgument("log lengthscales must be finite and non-empty".into()));
        }
        Ok(Self { log_lengthscales, scale, nugget })
    }

    pub fn dims(&self) -> usize {
        self.log_lengthscales.len()
    }

    /// Packs into the optimisation vector `(ζ_1..ζ_p, ln τ², ln υ)`.
    pub fn to_log_vector(&self) -> Vec<f64> {
        let mut v = self.log_lengthscales.clone();
        v.push(self.scale.ln());
        v.push(self.nugget.ln());
        v
    }

    pub fn from_log_vector(v: &[f64]) -> Self {
        let p = v.len() - 2;
        Self { log_lengthscales: v[..p].to_vec(), scale: v[p].exp(), nugget: v[p + 1].exp() }
    }

    fn inverse_lengthscales(&self) -> Vec<f64> {
        self.log_lengthscales.iter().map(|z| z.exp()).collect()
    }
}

/// Separable Matérn-3/2 correlation in `(0, 1]`.
pub fn matern_correlation(a: &[f64], b: &[f64], log_lengthscales: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), actual: b.len() });
    }
    if a.len() != log_lengthscales.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), actual: log_lengthscales.len() });
    }
    let inv: Vec<f64> = log_lengthscales.iter().map(|z| z.exp()).collect();
    Ok(correlation(a, b, &inv))
}

#[inline]
fn correlation(a: &[f64], b: &[f64], inv_ls: &[f64]) -> f64 {
    let mut prod = 1.0;
    let mut sum = 0.0;
    for ((x, y), s) in a.iter().zip(b).zip(inv_ls) {
        let r = (x - y).abs() * s;
        prod *= 1.0 + r;
        sum += r;
    }
    prod * (-sum).exp()
}

#[derive(Debug, Clone)]
pub struct FitConfig {
    /// Number of fresh starting points (heuristic, then random).
    pub starts: usize,
    pub max_iter: usize,
    pub seed: u64,
    /// Optional extra starting point, tried first.
    pub warm_start: Option<KernelParams>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { starts: 4, max_iter: 60, seed: 0, warm_start: None }
    }
}

/// Mean and variance of the predictive distribution of `η(θ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub var: f64,
}

/// A fitted emulator. Immutable; the liar update returns a new value.
#[derive(Debug, Clone)]
pub struct GpPosterior {
    params: KernelParams,
    inv_ls: Vec<f64>,
    inputs: Vec<Vec<f64>>,
    outputs: Vec<f64>,
    center: f64,
    /// Lower Cholesky factor of `K = τ² C + υ I`.
    chol: DMatrix<f64>,
    /// `K⁻¹ (η - center)`
    weights: DVector<f64>,
}

impl GpPosterior {
    /// Fits hyperparameters by maximum marginal likelihood on the given data.
    pub fn fit(inputs: &[Vec<f64>], outputs: &[f64], config: &FitConfig) -> Result<Self> {
        validate_data(inputs, outputs)?;
        let center = mean(outputs);
        let centered: Vec<f64> = outputs.iter().map(|y| y - center).collect();
        let bounds = Bounds::new(inputs, &centered);

        let mut starts: Vec<Vec<f64>> = Vec::new();
        if let Some(warm) = &config.warm_start {
            if warm.dims() == inputs[0].len() {
                starts.push(bounds.project(&warm.to_log_vector()));
            }
        }
        let mut rng = rng::stream(config.seed, &[0x6670]);
        for i in 0..config.starts {
            starts.push(bounds.start(i, &mut rng));
        }
        if starts.is_empty() {
            starts.push(bounds.start(0, &mut rng));
        }

        let objective = |x: &[f64]| neg_lml_and_grad(inputs, &centered, x);
        let mut best: Option<(Vec<f64>, f64)> = None;
        for x0 in starts {
            if let Some((x, f)) = minimize_projected_bfgs(&objective, x0, &bounds, config.max_iter) {
                if best.as_ref().is_none_or(|(_, fb)| f < *fb) {
                    best = Some((x, f));
                }
            }
        }
        let (x, _) = best.ok_or(Error::SingularKernel)?;
        let mut params = KernelParams::from_log_vector(&x);
        params.nugget = params.nugget.max(NUGGET_FLOOR * params.scale);
        Self::with_params(inputs, outputs, params, Some(center))
    }

    pub fn fit_samples(samples: &[Sample], config: &FitConfig) -> Result<Self> {
        let (inputs, outputs) = split_samples(samples)?;
        Self::fit(&inputs, &outputs, config)
    }

    /// Conditions on data with fixed hyperparameters. `center` defaults to
    /// the sample mean of `outputs`.
    pub fn with_params(inputs: &[Vec<f64>], outputs: &[f64], params: KernelParams, center: Option<f64>) -> Result<Self> {
        validate_data(inputs, outputs)?;
        if params.dims() != inputs[0].len() {
            return Err(Error::DimensionMismatch { expected: inputs[0].len(), actual: params.dims() });
        }
        let center = center.unwrap_or_else(|| mean(outputs));
        let inv_ls = params.inverse_lengthscales();
        let n = inputs.len();
        let mut k = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            k[(i, i)] = params.scale + params.nugget;
            for j in 0..i {
                let v = params.scale * correlation(&inputs[i], &inputs[j], &inv_ls);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        let chol = Cholesky::new(k).ok_or(Error::SingularKernel)?;
        let centered = DVector::from_iterator(n, outputs.iter().map(|y| y - center));
        let weights = chol.solve(&centered);
        Ok(Self {
            params,
            inv_ls,
            inputs: inputs.to_vec(),
            outputs: outputs.to_vec(),
            center,
            chol: chol.unpack(),
            weights,
        })
    }

    /// Appends `(theta, output)` with hyperparameters and center frozen,
    /// extending the Cholesky factor by one row.
    pub fn with_appended(&self, theta: &[f64], output: f64) -> Result<Self> {
        if theta.len() != self.dims() {
            return Err(Error::DimensionMismatch { expected: self.dims(), actual: theta.len() });
        }
        let n = self.len();
        let kvec = self.cross_kernel(theta);
        let l = self.solve_lower(kvec);
        let d2 = self.params.scale + self.params.nugget - l.norm_squared();
        if d2.is_nan() || d2 <= 0.0 {
            return Err(Error::SingularKernel);
        }
        let mut chol = self.chol.clone().resize(n + 1, n + 1, 0.0);
        for j in 0..n {
            chol[(n, j)] = l[j];
        }
        chol[(n, n)] = d2.sqrt();
        let mut inputs = self.inputs.clone();
        inputs.push(theta.to_vec());
        let mut outputs = self.outputs.clone();
        outputs.push(output);
        let centered = DVector::from_iterator(n + 1, outputs.iter().map(|y| y - self.center));
        let weights = cholesky_solve(&chol, centered);
        Ok(Self {
            params: self.params.clone(),
            inv_ls: self.inv_ls.clone(),
            inputs,
            outputs,
            center: self.center,
            chol,
            weights,
        })
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.inv_ls.len()
    }

    /// Prior covariance `k(a, b)` (no nugget).
    pub fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        self.params.scale * correlation(a, b, &self.inv_ls)
    }

    /// `k_t(θ)`: covariances between `theta` and every training input.
    pub fn cross_kernel(&self, theta: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.inputs.iter().map(|x| self.kernel(theta, x)))
    }

    /// Cross-covariance matrix `K(X, points)`, one column per point.
    pub fn cross_kernel_matrix(&self, points: &[Vec<f64>]) -> DMatrix<f64> {
        let n = self.len();
        let mut m = DMatrix::<f64>::zeros(n, points.len());
        for (c, p) in points.iter().enumerate() {
            for (r, x) in self.inputs.iter().enumerate() {
                m[(r, c)] = self.kernel(p, x);
            }
        }
        m
    }

    /// `L⁻¹ v`
    pub fn solve_lower(&self, mut v: DVector<f64>) -> DVector<f64> {
        self.chol.solve_lower_triangular_mut(&mut v);
        v
    }

    /// `L⁻¹ M`
    pub fn solve_lower_matrix(&self, mut m: DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve_lower_triangular_mut(&mut m);
        m
    }

    pub fn predict(&self, theta: &[f64]) -> Prediction {
        let k = self.cross_kernel(theta);
        let mean = k.dot(&self.weights) + self.center;
        let v = self.solve_lower(k);
        let var = (self.params.scale - v.norm_squared()).max(0.0);
        Prediction { mean, var }
    }

    /// Predictions at many points at once.
    pub fn predict_many(&self, points: &[Vec<f64>]) -> Vec<Prediction> {
        self.predict_many_solved(points).0
    }

    /// Predictions plus `L⁻¹ K(X, points)`, for callers that also need
    /// posterior covariances between the points and others.
    pub fn predict_many_solved(&self, points: &[Vec<f64>]) -> (Vec<Prediction>, DMatrix<f64>) {
        let k = self.cross_kernel_matrix(points);
        let means = k.tr_mul(&self.weights);
        let v = self.solve_lower_matrix(k);
        let preds = (0..points.len())
            .map(|c| Prediction {
                mean: means[c] + self.center,
                var: (self.params.scale - v.column(c).norm_squared()).max(0.0),
            })
            .collect();
        (preds, v)
    }

    /// `cov_t(θ, θ*) = k(θ, θ*) - k_t(θ)ᵀ K⁻¹ k_t(θ*)`
    pub fn posterior_cov(&self, theta: &[f64], theta_star: &[f64]) -> f64 {
        let a = self.solve_lower(self.cross_kernel(theta));
        let b = self.solve_lower(self.cross_kernel(theta_star));
        self.kernel(theta, theta_star) - a.dot(&b)
    }

    /// `τ²_t(θ, θ*) = cov_t(θ, θ*)² / (s²_t(θ*) + υ)`: the variance of the
    /// posterior mean at `θ` induced by a new noisy evaluation at `θ*`.
    pub fn variance_reduction(&self, theta: &[f64], theta_star: &[f64]) -> f64 {
        let cov = self.posterior_cov(theta, theta_star);
        cov * cov / (self.predict(theta_star).var + self.params.nugget)
    }

    /// Log marginal likelihood of the centered outputs under the current
    /// hyperparameters.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let centered: Vec<f64> = self.outputs.iter().map(|y| y - self.center).collect();
        -neg_lml_and_grad(&self.inputs, &centered, &self.params.to_log_vector()).map_or(f64::INFINITY, |(f, _)| f)
    }
}

fn validate_data(inputs: &[Vec<f64>], outputs: &[f64]) -> Result<()> {
    if inputs.len() < 2 {
        return Err(Error::InvalidArgument(format!("GP fit needs at least 2 points, got {}", inputs.len())));
    }
    if inputs.len() != outputs.len() {
        return Err(Error::DimensionMismatch { expected: inputs.len(), actual: outputs.len() });
    }
    let p = inputs[0].len();
    if p == 0 {
        return Err(Error::InvalidArgument("inputs must have at least one dimension".into()));
    }
    if let Some(bad) = inputs.iter().find(|x| x.len() != p) {
        return Err(Error::DimensionMismatch { expected: p, actual: bad.len() });
    }
    if outputs.iter().any(|y| !y.is_finite()) {
        return Err(Error::InvalidArgument("GP outputs must be finite".into()));
    }
    Ok(())
}

pub(crate) fn split_samples(samples: &[Sample]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut inputs = Vec::with_capacity(samples.len());
    let mut outputs = Vec::with_capacity(samples.len());
    for s in samples {
        let y = s.output.ok_or_else(|| Error::InvalidArgument("GP fit needs evaluated samples".into()))?;
        inputs.push(s.theta.clone());
        outputs.push(y);
    }
    Ok((inputs, outputs))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn cholesky_solve(l: &DMatrix<f64>, mut b: DVector<f64>) -> DVector<f64> {
    l.solve_lower_triangular_mut(&mut b);
    l.tr_solve_lower_triangular_mut(&mut b);
    b
}

/// Negative log marginal likelihood of centered data and its gradient with
/// respect to `x = (ζ_1..ζ_p, ln τ², ln υ)`. `None` when `K` is not
/// numerically positive definite.
pub fn neg_lml_and_grad(inputs: &[Vec<f64>], centered: &[f64], x: &[f64]) -> Option<(f64, Vec<f64>)> {
    let n = inputs.len();
    let p = x.len() - 2;
    let inv_ls: Vec<f64> = x[..p].iter().map(|z| z.exp()).collect();
    let scale = x[p].exp();
    let nugget = x[p + 1].exp();

    let mut corr = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        corr[(i, i)] = 1.0;
        for j in 0..i {
            let c = correlation(&inputs[i], &inputs[j], &inv_ls);
            corr[(i, j)] = c;
            corr[(j, i)] = c;
        }
    }
    let mut k = &corr * scale;
    for i in 0..n {
        k[(i, i)] += nugget;
    }
    let chol: Cholesky<f64, Dyn> = Cholesky::new(k)?;
    let y = DVector::from_column_slice(centered);
    let alpha = chol.solve(&y);
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
    let nll = 0.5 * y.dot(&alpha) + 0.5 * log_det + 0.5 * n as f64 * (2.0 * PI).ln();
    if !nll.is_finite() {
        return None;
    }

    // d(-lml)/dθ_j = -½ tr((ααᵀ - K⁻¹) ∂K/∂θ_j)
    let kinv = inverse_lower_from_chol(chol.l_dirty());
    let mut grad = vec![0.0; p + 2];
    let mut acc = vec![0.0; p];
    let mut scale_acc = 0.0;
    for i in 0..n {
        for j in 0..i {
            let w = alpha[i] * alpha[j] - kinv[(i, j)];
            let c = corr[(i, j)];
            scale_acc += 2.0 * w * c;
            let wc = w * c;
            for l in 0..p {
                let r = (inputs[i][l] - inputs[j][l]).abs() * inv_ls[l];
                acc[l] += wc * r * r / (1.0 + r);
            }
        }
    }
    let mut trace_w = 0.0;
    for i in 0..n {
        let w = alpha[i] * alpha[i] - kinv[(i, i)];
        trace_w += w;
        scale_acc += w;
    }
    for l in 0..p {
        // ∂c/∂ζ_l = -c r_l² / (1 + r_l); the factor ½ cancels the pair symmetry.
        grad[l] = scale * acc[l];
    }
    grad[p] = -0.5 * scale * scale_acc;
    grad[p + 1] = -0.5 * nugget * trace_w;
    Some((nll, grad))
}

/// Lower triangle of `K⁻¹ = L⁻ᵀ L⁻¹` given the lower Cholesky factor `L`
/// (only entries `(i, j)` with `i ≥ j` are filled).
fn inverse_lower_from_chol(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let ls = l.as_slice();
    // Column-major L⁻¹; column j is zero above row j.
    let mut w = vec![0.0; n * n];
    for j in 0..n {
        let x = &mut w[j * n..(j + 1) * n];
        x[j] = 1.0;
        for k in j..n {
            let xk = x[k] / ls[k * n + k];
            x[k] = xk;
            if xk != 0.0 {
                for (xi, lik) in x[k + 1..].iter_mut().zip(&ls[k * n + k + 1..(k + 1) * n]) {
                    *xi -= xk * lik;
                }
            }
        }
    }
    let mut kinv = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let wj = &w[j * n..(j + 1) * n];
        for i in j..n {
            let wi = &w[i * n + i..(i + 1) * n];
            kinv[(i, j)] = wi.iter().zip(&wj[i..]).map(|(a, b)| a * b).sum();
        }
    }
    kinv
}

/// Box for the log-hyperparameters derived from the data's spread.
struct Bounds {
    lo: Vec<f64>,
    hi: Vec<f64>,
    widths: Vec<f64>,
    var: f64,
}

impl Bounds {
    fn new(inputs: &[Vec<f64>], centered: &[f64]) -> Self {
        let p = inputs[0].len();
        let widths: Vec<f64> = (0..p)
            .map(|l| {
                let (lo, hi) = inputs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x[l]), b.max(x[l])));
                (hi - lo).max(1e-6)
            })
            .collect();
        let var = (centered.iter().map(|y| y * y).sum::<f64>() / centered.len() as f64).max(1e-12);
        let mut lo: Vec<f64> = widths.iter().map(|w| (0.1 / w).ln()).collect();
        let mut hi: Vec<f64> = widths.iter().map(|w| (100.0 / w).ln()).collect();
        lo.push((var * 1e-4).ln());
        hi.push((var * 1e4).ln());
        lo.push((var * 1e-4 * NUGGET_FLOOR).ln());
        hi.push(var.ln());
        Self { lo, hi, widths, var }
    }

    fn project(&self, x: &[f64]) -> Vec<f64> {
        let p = self.widths.len();
        let mut y: Vec<f64> = x.iter().zip(self.lo.iter().zip(&self.hi)).map(|(v, (lo, hi))| v.clamp(*lo, *hi)).collect();
        y[p + 1] = y[p + 1].max(y[p] + NUGGET_FLOOR.ln()).min(self.hi[p + 1]);
        y
    }

    fn start<R: Rng>(&self, index: usize, rng: &mut R) -> Vec<f64> {
        const FRACTIONS: [f64; 4] = [0.3, 1.0, 0.1, 3.0];
        let p = self.widths.len();
        let mut x: Vec<f64> = if index < FRACTIONS.len() {
            self.widths.iter().map(|w| (1.0 / (FRACTIONS[index] * w)).ln()).collect()
        } else {
            (0..p).map(|l| self.lo[l] + (self.hi[l] - self.lo[l]) * rng.random::<f64>()).collect()
        };
        x.push(self.var.ln());
        x.push((self.var * if index.is_multiple_of(2) { 1e-6 } else { 1e-3 }).ln());
        self.project(&x)
    }
}

/// Minimizes `f` over the projected box with BFGS directions and Armijo
/// backtracking. Returns the final point and value.
fn minimize_projected_bfgs<F>(f: &F, x0: Vec<f64>, bounds: &Bounds, max_iter: usize) -> Option<(Vec<f64>, f64)>
where
    F: Fn(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let d = x0.len();
    let mut x = bounds.project(&x0);
    let (mut fx, mut gx) = f(&x)?;
    let mut h = DMatrix::<f64>::identity(d, d);
    let mut fresh = true;

    for _ in 0..max_iter {
        let g = DVector::from_column_slice(&gx);
        let mut dir = -(&h * &g);
        if g.dot(&dir) >= 0.0 {
            h.fill_with_identity();
            fresh = true;
            dir = -g.clone();
        }
        let max_step = dir.amax();
        if max_step < 1e-12 {
            break;
        }
        if max_step > 2.0 {
            dir *= 2.0 / max_step;
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let trial: Vec<f64> = x.iter().zip(dir.iter()).map(|(a, b)| a + step * b).collect();
            let xn = bounds.project(&trial);
            let moved: f64 = xn.iter().zip(&x).zip(&gx).map(|((a, b), g)| (a - b) * g).sum();
            if xn.iter().zip(&x).all(|(a, b)| a == b) {
                break;
            }
            if let Some((fnew, gnew)) = f(&xn) {
                if fnew <= fx + 1e-4 * moved {
                    accepted = Some((xn, fnew, gnew));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, fnew, gnew)) = accepted else {
            if fresh {
                break;
            }
            h.fill_with_identity();
            fresh = true;
            continue;
        };
        let s = DVector::from_iterator(d, xn.iter().zip(&x).map(|(a, b)| a - b));
        let yv = DVector::from_iterator(d, gnew.iter().zip(&gx).map(|(a, b)| a - b));
        let sy = s.dot(&yv);
        if sy > 1e-12 {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(d, d);
            let left = &i - rho * &s * yv.transpose();
            let right = &i - rho * &yv * s.transpose();
            h = &left * &h * &right + rho * &s * s.transpose();
            fresh = false;
        }
        let converged = (fx - fnew).abs() <= 1e-8 * (1.0 + fx.abs()) || s.amax() < 1e-7;
        x = xn;
        fx = fnew;
        gx = gnew;
        if converged {
            break;
        }
    }
    Some((x, fx))
}
