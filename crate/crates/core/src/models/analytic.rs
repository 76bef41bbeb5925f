//! A two-parameter test problem with a known model error.
//!
//! The coarse map is linear, `F*(x) = A x`, and the fine map adds a
//! quadratic term, `F(x) = A x + ε b(x)` with `b(x) = (x₁², x₁x₂, x₂²)`.
//! The model reduction error is therefore exactly `ε b(x)`, and with
//! `ε = 0` the posterior under a Gaussian prior is Gaussian in closed form.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_dim, invalid, ForwardError, Result};
use crate::linalg::{Cholesky, Matrix};
use crate::target::{Bounds, ForwardModel, ForwardPair, NoiseModel, Posterior, Prior};

pub fn quadratic_features(x: &[f64]) -> [f64; 3] {
    [x[0] * x[0], x[0] * x[1], x[1] * x[1]]
}

#[derive(Debug, Clone)]
pub struct AnalyticModel {
    a: Matrix,
    epsilon: f64,
}

impl AnalyticModel {
    pub fn new(a: Matrix, epsilon: f64) -> Result<Self> {
        if a.rows() != 3 || a.cols() != 2 {
            return Err(invalid("analytic model matrix must be 3x2"));
        }
        if !(epsilon >= 0.0) {
            return Err(invalid("epsilon must be nonnegative"));
        }
        Ok(Self { a, epsilon })
    }

    pub fn default_fine(epsilon: f64) -> Self {
        Self::new(AnalyticSpec::default().a, epsilon).expect("default matrix is 3x2")
    }
}

impl ForwardModel for AnalyticModel {
    fn input_dim(&self) -> usize {
        2
    }
    fn output_dim(&self) -> usize {
        3
    }
    fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>, ForwardError> {
        if x.len() != 2 {
            return Err(ForwardError::new(x, "analytic model expects 2 parameters"));
        }
        let mut out = self
            .a
            .mul_vec(x)
            .map_err(|e| ForwardError::new(x, alloc::format!("{e}")))?;
        if self.epsilon != 0.0 {
            for (o, b) in out.iter_mut().zip(quadratic_features(x)) {
                *o += self.epsilon * b;
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticSpec {
    pub a: Matrix,
    pub epsilon: f64,
    pub prior_mean: [f64; 2],
    pub prior_variance: [f64; 2],
    pub noise_sigma: f64,
    pub x_true: [f64; 2],
}

impl Default for AnalyticSpec {
    fn default() -> Self {
        Self {
            a: Matrix::from_rows(&[&[1.0, 0.5], &[0.3, 1.0], &[1.0, -1.0]]).expect("3x2"),
            epsilon: 0.1,
            prior_mean: [0.0, 0.0],
            prior_variance: [4.0, 4.0],
            noise_sigma: 0.2,
            x_true: [1.0, 0.5],
        }
    }
}

impl AnalyticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.a.rows() != 3 || self.a.cols() != 2 {
            return Err(invalid("analytic.a must be 3x2"));
        }
        // full column rank <=> AᵀA is positive definite
        let ata = self.a.transpose().matmul(&self.a)?;
        Cholesky::new(&ata).map_err(|_| invalid("analytic.a must have full column rank"))?;
        if !(self.epsilon >= 0.0) {
            return Err(invalid("analytic.epsilon must be nonnegative"));
        }
        if !(self.noise_sigma > 0.0) {
            return Err(invalid("analytic.noise_sigma must be positive"));
        }
        if self.prior_variance.iter().any(|v| !(*v > 0.0)) {
            return Err(invalid("analytic.prior_variance must be positive"));
        }
        Ok(())
    }

    pub fn fine(&self) -> AnalyticModel {
        AnalyticModel {
            a: self.a.clone(),
            epsilon: self.epsilon,
        }
    }

    pub fn coarse(&self) -> AnalyticModel {
        AnalyticModel {
            a: self.a.clone(),
            epsilon: 0.0,
        }
    }

    pub fn pair(&self) -> ForwardPair {
        ForwardPair::new(Arc::new(self.fine()), Arc::new(self.coarse()))
            .expect("fine and coarse share dimensions")
    }

    pub fn prior(&self) -> Prior {
        Prior::gaussian(
            self.prior_mean.to_vec(),
            self.prior_variance.to_vec(),
            Bounds::unbounded(2),
        )
        .expect("validated prior")
    }

    pub fn noise(&self) -> NoiseModel {
        NoiseModel::isotropic(3, self.noise_sigma).expect("positive sigma")
    }

    pub fn posterior(&self, data: Vec<f64>) -> Result<Posterior> {
        self.validate()?;
        Posterior::new(self.pair(), self.noise(), self.prior(), data)
    }

    /// Closed-form posterior of the linear part: valid exactly when ε = 0.
    pub fn linear_gaussian_posterior(&self, data: &[f64]) -> Result<GaussianPosterior> {
        linear_gaussian_posterior(
            &self.a,
            self.noise().covariance(),
            &self.prior_mean,
            &Matrix::from_diagonal(&self.prior_variance),
            data,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior {
    pub mean: Vec<f64>,
    pub covariance: Matrix,
}

/// Conjugate update for `d = A x + e`, `e ~ N(0, Σ_e)`, `x ~ N(m₀, P₀)`.
pub fn linear_gaussian_posterior(
    a: &Matrix,
    noise_cov: &Matrix,
    prior_mean: &[f64],
    prior_cov: &Matrix,
    data: &[f64],
) -> Result<GaussianPosterior> {
    check_dim("data", a.rows(), data.len())?;
    check_dim("prior mean", a.cols(), prior_mean.len())?;
    let noise_inv = Cholesky::new(noise_cov)?.inverse();
    let prior_inv = Cholesky::new(prior_cov)?.inverse();
    let at = a.transpose();
    let precision = at.matmul(&noise_inv)?.matmul(a)?.add(&prior_inv)?;
    let pf = Cholesky::new(&precision)?;
    let rhs_data = at.matmul(&noise_inv)?.mul_vec(data)?;
    let rhs_prior = prior_inv.mul_vec(prior_mean)?;
    let rhs: Vec<f64> = rhs_data.iter().zip(&rhs_prior).map(|(a, b)| a + b).collect();
    let mean = pf.solve(&rhs)?;
    Ok(GaussianPosterior {
        mean,
        covariance: pf.inverse(),
    })
}

/// Integrates `f` against the normalized exact posterior on a tensor grid
/// of `n × n` midpoints covering `[lo, hi]` in each coordinate.
pub fn grid_posterior_expectation(
    posterior: &Posterior,
    lo: [f64; 2],
    hi: [f64; 2],
    n: usize,
    f: impl Fn(&[f64]) -> Vec<f64>,
) -> Result<Vec<f64>> {
    let h = [(hi[0] - lo[0]) / n as f64, (hi[1] - lo[1]) / n as f64];
    let mut logs = Vec::with_capacity(n * n);
    let mut pts = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let x = [lo[0] + (i as f64 + 0.5) * h[0], lo[1] + (j as f64 + 0.5) * h[1]];
            let fine = posterior.pair().eval_fine(&x)?;
            let lp = posterior.log_prior(&x) + posterior.log_likelihood(&fine)?;
            logs.push(lp);
            pts.push(x);
        }
    }
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    let mut acc: Vec<f64> = vec![];
    for (x, lp) in pts.iter().zip(&logs) {
        let w = (lp - max).exp();
        z += w;
        let v = f(x);
        if acc.is_empty() {
            acc = vec![0.0; v.len()];
        }
        for (a, b) in acc.iter_mut().zip(v) {
            *a += w * b;
        }
    }
    Ok(acc.into_iter().map(|a| a / z).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_epsilon_makes_pair_identical() {
        let spec = AnalyticSpec {
            epsilon: 0.0,
            ..AnalyticSpec::default()
        };
        let x = [0.3, -1.2];
        assert_eq!(spec.fine().evaluate(&x).unwrap(), spec.coarse().evaluate(&x).unwrap());
    }

    #[test]
    fn model_error_at_ones_is_epsilon() {
        let spec = AnalyticSpec::default();
        let x = [1.0, 1.0];
        let f = spec.fine().evaluate(&x).unwrap();
        let c = spec.coarse().evaluate(&x).unwrap();
        for (a, b) in f.iter().zip(&c) {
            assert!((a - b - 0.1).abs() < 1e-15);
        }
    }

    #[test]
    fn closed_form_matches_grid_quadrature() {
        let spec = AnalyticSpec {
            epsilon: 0.0,
            ..AnalyticSpec::default()
        };
        let data = spec.fine().evaluate(&spec.x_true).unwrap();
        let post = spec.posterior(data.clone()).unwrap();
        let g = spec.linear_gaussian_posterior(&data).unwrap();
        let sd = [g.covariance[(0, 0)].sqrt(), g.covariance[(1, 1)].sqrt()];
        let lo = [g.mean[0] - 8.0 * sd[0], g.mean[1] - 8.0 * sd[1]];
        let hi = [g.mean[0] + 8.0 * sd[0], g.mean[1] + 8.0 * sd[1]];
        let m = grid_posterior_expectation(&post, lo, hi, 200, |x| x.to_vec()).unwrap();
        for (k, mk) in m.iter().enumerate() {
            assert!((mk - g.mean[k]).abs() < 1e-8, "{k}: {mk} vs {}", g.mean[k]);
        }
    }
}
