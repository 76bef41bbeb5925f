//! Synthetic inverse problems with fine/coarse forward-model pairs.

pub mod analytic;
pub mod fv;
pub mod toy;

use alloc::vec::Vec;

use rand_distr::{Distribution, Normal};

use crate::error::{invalid, ForwardError, Result};
use crate::linalg::Matrix;
use crate::rng;
use crate::target::ForwardModel;

pub use analytic::{AnalyticModel, AnalyticSpec};
pub use fv::{FvModel, FvSpec, Resolution};
pub use toy::{discrete_toy, DiscreteToy};

/// `F(x) = A x`.
#[derive(Debug, Clone)]
pub struct LinearModel {
    a: Matrix,
}

impl LinearModel {
    pub fn new(a: Matrix) -> Self {
        Self { a }
    }
}

impl ForwardModel for LinearModel {
    fn input_dim(&self) -> usize {
        self.a.cols()
    }
    fn output_dim(&self) -> usize {
        self.a.rows()
    }
    fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>, ForwardError> {
        self.a
            .mul_vec(x)
            .map_err(|e| ForwardError::new(x, alloc::format!("{e}")))
    }
}

/// Observed data plus everything needed to audit how it was made.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub x_true: Vec<f64>,
    pub seed: u64,
    pub sigma: f64,
    /// Noise-free model output at `x_true`.
    pub clean: Vec<f64>,
    pub noise: Vec<f64>,
    pub data: Vec<f64>,
}

/// Evaluates `model` at `x_true` and adds iid `N(0, σ²)` noise drawn from
/// the synthetic-noise stream of `seed`. Callers pass the fine model.
pub fn generate_synthetic_data(
    model: &dyn ForwardModel,
    x_true: &[f64],
    sigma: f64,
    seed: u64,
) -> Result<SyntheticData> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(invalid("noise sigma must be finite and nonnegative"));
    }
    let clean = model.evaluate(x_true)?;
    let noise: Vec<f64> = if sigma == 0.0 {
        alloc::vec![0.0; clean.len()]
    } else {
        let mut r = rng::stream(seed, rng::STREAM_SYNTHETIC_NOISE);
        let normal = Normal::new(0.0, sigma).map_err(|e| invalid(alloc::format!("{e}")))?;
        (0..clean.len()).map(|_| normal.sample(&mut r)).collect()
    };
    let data = clean.iter().zip(&noise).map(|(c, e)| c + e).collect();
    Ok(SyntheticData {
        x_true: x_true.to_vec(),
        seed,
        sigma,
        clean,
        noise,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn zero_sigma_reproduces_model_output() {
        let m = LinearModel::new(Matrix::identity(3));
        let s = generate_synthetic_data(&m, &[1.0, 2.0, 3.0], 0.0, 5).unwrap();
        assert_eq!(s.data, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn same_seed_same_data() {
        let m = LinearModel::new(Matrix::identity(3));
        let a = generate_synthetic_data(&m, &[1.0, 2.0, 3.0], 0.3, 5).unwrap();
        let b = generate_synthetic_data(&m, &[1.0, 2.0, 3.0], 0.3, 5).unwrap();
        let c = generate_synthetic_data(&m, &[1.0, 2.0, 3.0], 0.3, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn noise_std_close_to_sigma() {
        let m = LinearModel::new(Matrix::identity(4000));
        let x = vec![0.0; 4000];
        let sigma = 0.7;
        let s = generate_synthetic_data(&m, &x, sigma, 11).unwrap();
        let n = s.noise.len() as f64;
        let mean = s.noise.iter().sum::<f64>() / n;
        let sd = (s.noise.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1.0))
            .sqrt();
        assert!((sd / sigma - 1.0).abs() < 0.1, "sd = {sd}");
    }
}
