//! The exact posterior: forward models, Gaussian noise, priors.
//!
//! Densities are unnormalized and kept in log space. The Gaussian
//! normalizing constant is dropped since it does not depend on `x`.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, invalid, Error, ForwardError, Result};
use crate::linalg::{Cholesky, Matrix};

/// A deterministic map from parameters to observables.
pub trait ForwardModel: Send + Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>, ForwardError>;
}

impl<M: ForwardModel + ?Sized> ForwardModel for Arc<M> {
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }
    fn output_dim(&self) -> usize {
        (**self).output_dim()
    }
    fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>, ForwardError> {
        (**self).evaluate(x)
    }
}

impl<M: ForwardModel + ?Sized> ForwardModel for alloc::boxed::Box<M> {
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }
    fn output_dim(&self) -> usize {
        (**self).output_dim()
    }
    fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>, ForwardError> {
        (**self).evaluate(x)
    }
}

/// Cumulative evaluation counts, shared by every chain using the pair.
#[derive(Debug, Default)]
pub struct EvalCounters {
    fine: AtomicU64,
    coarse: AtomicU64,
}

impl EvalCounters {
    pub fn fine(&self) -> u64 {
        self.fine.load(Ordering::Relaxed)
    }
    pub fn coarse(&self) -> u64 {
        self.coarse.load(Ordering::Relaxed)
    }
}

/// The exact map `F` and its reduced counterpart `F*`.
#[derive(Clone)]
pub struct ForwardPair {
    fine: Arc<dyn ForwardModel>,
    coarse: Arc<dyn ForwardModel>,
    counters: Arc<EvalCounters>,
}

impl fmt::Debug for ForwardPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ForwardPair")
            .field("input_dim", &self.input_dim())
            .field("output_dim", &self.output_dim())
            .field("counters", &self.counters)
            .finish()
    }
}

impl ForwardPair {
    pub fn new(fine: Arc<dyn ForwardModel>, coarse: Arc<dyn ForwardModel>) -> Result<Self> {
        check_dim("coarse model input", fine.input_dim(), coarse.input_dim())?;
        check_dim("coarse model output", fine.output_dim(), coarse.output_dim())?;
        Ok(Self {
            fine,
            coarse,
            counters: Arc::new(EvalCounters::default()),
        })
    }

    /// A pair whose reduced model is the exact model itself.
    pub fn exact(model: Arc<dyn ForwardModel>) -> Self {
        Self {
            fine: model.clone(),
            coarse: model,
            counters: Arc::new(EvalCounters::default()),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.fine.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.fine.output_dim()
    }

    pub fn counters(&self) -> &EvalCounters {
        &self.counters
    }

    pub fn eval_fine(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.counters.fine.fetch_add(1, Ordering::Relaxed);
        let out = self.fine.evaluate(x)?;
        check_dim("fine model output", self.output_dim(), out.len())?;
        Ok(out)
    }

    pub fn eval_coarse(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.counters.coarse.fetch_add(1, Ordering::Relaxed);
        let out = self.coarse.evaluate(x)?;
        check_dim("coarse model output", self.output_dim(), out.len())?;
        Ok(out)
    }
}

/// Gaussian observation noise `e ~ N(0, Σ_e)`, factorized once.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    covariance: Matrix,
    factor: Cholesky,
}

impl NoiseModel {
    pub fn new(covariance: Matrix) -> Result<Self> {
        let asym = covariance.asymmetry();
        if asym > 1e-12 {
            return Err(Error::NotSymmetric(asym));
        }
        let factor = Cholesky::new(&covariance)?;
        Ok(Self { covariance, factor })
    }

    pub fn diagonal(variances: &[f64]) -> Result<Self> {
        Self::new(Matrix::from_diagonal(variances))
    }

    pub fn isotropic(m: usize, sigma: f64) -> Result<Self> {
        Self::diagonal(&vec![sigma * sigma; m])
    }

    pub fn dim(&self) -> usize {
        self.covariance.rows()
    }

    pub fn covariance(&self) -> &Matrix {
        &self.covariance
    }

    pub fn factor(&self) -> &Cholesky {
        &self.factor
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect();
        self.factor.mul_lower(&z).expect("dimension matches")
    }
}

/// `−½ rᵀ C⁻¹ r` for the covariance factored in `factor`. Any non-finite
/// residual entry gives `−∞`.
pub fn gaussian_misfit(residual: &[f64], factor: &Cholesky) -> Result<f64> {
    check_dim("residual", factor.dim(), residual.len())?;
    if residual.iter().any(|r| !r.is_finite()) {
        return Ok(f64::NEG_INFINITY);
    }
    let q = factor.quad_form(residual)?;
    Ok(if q.is_finite() { -0.5 * q } else { f64::NEG_INFINITY })
}

/// Per-coordinate box constraints. Infinite bounds are allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_dim("upper bounds", lower.len(), upper.len())?;
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(invalid("each lower bound must be strictly below its upper bound"));
        }
        Ok(Self { lower, upper })
    }

    pub fn uniform(d: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![lower; d], vec![upper; d])
    }

    pub fn unbounded(d: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; d],
            upper: vec![f64::INFINITY; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| v.is_finite() && *l <= *v && *v <= *u)
    }

    pub fn is_finite(&self) -> bool {
        self.lower.iter().chain(&self.upper).all(|b| b.is_finite())
    }
}

pub type LogDensityFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

#[derive(Clone)]
pub enum Prior {
    /// Indicator of the box: log-density 0 inside, −∞ outside.
    Box(Bounds),
    /// Independent Gaussians truncated to the box.
    Gaussian {
        mean: Vec<f64>,
        variance: Vec<f64>,
        bounds: Bounds,
    },
    /// Arbitrary log-density restricted to the box.
    Custom {
        bounds: Bounds,
        log_density: Arc<LogDensityFn>,
    },
}

impl fmt::Debug for Prior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Prior::Box(b) => f.debug_tuple("Box").field(b).finish(),
            Prior::Gaussian {
                mean,
                variance,
                bounds,
            } => f
                .debug_struct("Gaussian")
                .field("mean", mean)
                .field("variance", variance)
                .field("bounds", bounds)
                .finish(),
            Prior::Custom { bounds, .. } => f.debug_struct("Custom").field("bounds", bounds).finish(),
        }
    }
}

impl Prior {
    pub fn gaussian(mean: Vec<f64>, variance: Vec<f64>, bounds: Bounds) -> Result<Self> {
        check_dim("prior variance", mean.len(), variance.len())?;
        check_dim("prior bounds", mean.len(), bounds.dim())?;
        if variance.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(invalid("prior variances must be positive and finite"));
        }
        Ok(Prior::Gaussian {
            mean,
            variance,
            bounds,
        })
    }

    pub fn bounds(&self) -> &Bounds {
        match self {
            Prior::Box(b) => b,
            Prior::Gaussian { bounds, .. } => bounds,
            Prior::Custom { bounds, .. } => bounds,
        }
    }

    pub fn dim(&self) -> usize {
        self.bounds().dim()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        if !self.bounds().contains(x) {
            return f64::NEG_INFINITY;
        }
        match self {
            Prior::Box(_) => 0.0,
            Prior::Gaussian { mean, variance, .. } => {
                -0.5 * x
                    .iter()
                    .zip(mean.iter().zip(variance))
                    .map(|(v, (m, s2))| (v - m) * (v - m) / s2)
                    .sum::<f64>()
            }
            Prior::Custom { log_density, .. } => log_density(x),
        }
    }

    /// Draws from the prior. Box priors need finite bounds; Gaussian priors
    /// are sampled by rejection against the box.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        match self {
            Prior::Box(b) => {
                if !b.is_finite() {
                    return Err(invalid("cannot sample a box prior with infinite bounds"));
                }
                Ok(b.lower
                    .iter()
                    .zip(&b.upper)
                    .map(|(l, u)| l + (u - l) * rng.random::<f64>())
                    .collect())
            }
            Prior::Gaussian {
                mean,
                variance,
                bounds,
            } => {
                for _ in 0..10_000 {
                    let x: Vec<f64> = mean
                        .iter()
                        .zip(variance)
                        .map(|(m, v)| m + v.sqrt() * rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    if bounds.contains(&x) {
                        return Ok(x);
                    }
                }
                Err(invalid("truncated Gaussian prior rejection sampling did not terminate"))
            }
            Prior::Custom { .. } => Err(invalid("custom priors have no sampler")),
        }
    }
}

/// Exact log-posterior at one point, with the fine output that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorEval {
    pub log_prior: f64,
    pub log_likelihood: f64,
    /// `None` when the prior short-circuited the evaluation.
    pub fine: Option<Vec<f64>>,
}

impl PosteriorEval {
    pub fn log_posterior(&self) -> f64 {
        self.log_prior + self.log_likelihood
    }
}

/// `π_post(x | d̃) ∝ exp[−½ (F(x)−d̃)ᵀ Σ_e⁻¹ (F(x)−d̃)] π_prior(x)`.
#[derive(Debug)]
pub struct Posterior {
    pair: ForwardPair,
    noise: NoiseModel,
    prior: Prior,
    data: Vec<f64>,
    nonfinite_outputs: AtomicU64,
}

impl Posterior {
    pub fn new(pair: ForwardPair, noise: NoiseModel, prior: Prior, data: Vec<f64>) -> Result<Self> {
        check_dim("data", pair.output_dim(), data.len())?;
        check_dim("noise covariance", pair.output_dim(), noise.dim())?;
        check_dim("prior", pair.input_dim(), prior.dim())?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("observed data"));
        }
        Ok(Self {
            pair,
            noise,
            prior,
            data,
            nonfinite_outputs: AtomicU64::new(0),
        })
    }

    pub fn pair(&self) -> &ForwardPair {
        &self.pair
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn prior(&self) -> &Prior {
        &self.prior
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn param_dim(&self) -> usize {
        self.pair.input_dim()
    }

    pub fn data_dim(&self) -> usize {
        self.data.len()
    }

    /// How many model outputs contained non-finite values.
    pub fn nonfinite_outputs(&self) -> u64 {
        self.nonfinite_outputs.load(Ordering::Relaxed)
    }

    pub fn log_prior(&self, x: &[f64]) -> f64 {
        self.prior.log_density(x)
    }

    /// `output − d̃`.
    pub fn residual(&self, output: &[f64]) -> Result<Vec<f64>> {
        check_dim("model output", self.data.len(), output.len())?;
        Ok(output.iter().zip(&self.data).map(|(o, d)| o - d).collect())
    }

    /// Gaussian log-likelihood of a model output against the data under
    /// `cov`'s factor (Σ_e, or an inflated Σ_B + Σ_e).
    pub fn misfit_with(&self, output: &[f64], factor: &Cholesky) -> Result<f64> {
        let r = self.residual(output)?;
        let v = gaussian_misfit(&r, factor)?;
        if v == f64::NEG_INFINITY && r.iter().any(|x| !x.is_finite()) {
            self.nonfinite_outputs.fetch_add(1, Ordering::Relaxed);
        }
        Ok(v)
    }

    pub fn log_likelihood(&self, output: &[f64]) -> Result<f64> {
        self.misfit_with(output, self.noise.factor())
    }

    /// Exact log-posterior. Out-of-support points return −∞ without
    /// touching the forward model.
    pub fn log_posterior(&self, x: &[f64]) -> Result<PosteriorEval> {
        check_dim("parameter", self.param_dim(), x.len())?;
        let log_prior = self.log_prior(x);
        if log_prior == f64::NEG_INFINITY {
            return Ok(PosteriorEval {
                log_prior,
                log_likelihood: f64::NEG_INFINITY,
                fine: None,
            });
        }
        let fine = self.pair.eval_fine(x)?;
        let log_likelihood = self.log_likelihood(&fine)?;
        Ok(PosteriorEval {
            log_prior,
            log_likelihood,
            fine: Some(fine),
        })
    }
}
