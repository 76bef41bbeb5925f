//! Reduced-model approximations of the posterior and the approximation
//! error models (AEM) that correct them.
//!
//! The model reduction error `B(x) = F(x) − F*(x)` is modelled as Gaussian.
//! Its statistics are either estimated once over the prior, adapted over
//! the posterior along the chain, or (for the state-dependent schemes)
//! estimated from increments of `B` between consecutive chain states with
//! the mean pinned at zero.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;
use core::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::linalg::{Cholesky, Matrix};
use crate::target::Posterior;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    /// The fine model itself; only meaningful for plain MH.
    Exact,
    /// Coarse model in place of the fine one.
    Approx1,
    /// Coarse model with an AEM estimated over the prior.
    Approx2,
    /// Coarse model with an AEM adapted over the posterior.
    Approx3,
    /// Coarse model shifted to agree with the fine model at the current state.
    Approx4,
    /// Approx4 with an adapted zero-mean covariance of the error increments.
    Approx5,
}

impl Scheme {
    pub const ALL: [Scheme; 6] = [
        Scheme::Exact,
        Scheme::Approx1,
        Scheme::Approx2,
        Scheme::Approx3,
        Scheme::Approx4,
        Scheme::Approx5,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Exact => "exact",
            Scheme::Approx1 => "approx1",
            Scheme::Approx2 => "approx2",
            Scheme::Approx3 => "approx3",
            Scheme::Approx4 => "approx4",
            Scheme::Approx5 => "approx5",
        }
    }

    /// Depends on the fine and coarse outputs at the current state.
    pub fn is_state_dependent(self) -> bool {
        matches!(self, Scheme::Approx4 | Scheme::Approx5)
    }

    /// Adapts its AEM along the chain.
    pub fn is_adaptive(self) -> bool {
        matches!(self, Scheme::Approx3 | Scheme::Approx5)
    }

    pub fn has_aem(self) -> bool {
        matches!(self, Scheme::Approx2 | Scheme::Approx3 | Scheme::Approx5)
    }
}

impl core::fmt::Display for Scheme {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| invalid(format!("unknown scheme '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MeanMode {
    Free,
    PinnedToZero,
}

/// What the posterior-adaptive (Approx3) recursion is fed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorInput {
    /// `B(x_n)`, matching the posterior mean and covariance of `B`.
    #[default]
    Plain,
    /// `B(x_n) − B(x_{n−1})`.
    Increment,
}

/// `F(x) − F*(x)`.
pub fn model_error(fine: &[f64], coarse: &[f64]) -> Result<Vec<f64>> {
    check_dim("coarse output", fine.len(), coarse.len())?;
    Ok(fine.iter().zip(coarse).map(|(f, c)| f - c).collect())
}

/// `F*_x(y) = F*(y) + F(x) − F*(x)`. Both caches at `x` are required; the
/// fine model is never re-evaluated here.
pub fn state_dep_forward(
    fine_x: Option<&[f64]>,
    coarse_x: Option<&[f64]>,
    coarse_y: &[f64],
) -> Result<Vec<f64>> {
    let fine_x = fine_x.ok_or_else(|| invalid("state-dependent output needs the cached fine output at x"))?;
    let coarse_x = coarse_x.ok_or_else(|| invalid("state-dependent output needs the cached coarse output at x"))?;
    check_dim("coarse output", fine_x.len(), coarse_x.len())?;
    check_dim("coarse output", fine_x.len(), coarse_y.len())?;
    Ok(coarse_y
        .iter()
        .zip(fine_x.iter().zip(coarse_x))
        .map(|(cy, (fx, cx))| cy + (fx - cx))
        .collect())
}

/// Default jitter `1e-10 · trace(Σ_e) / m`.
pub fn default_jitter(noise_cov: &Matrix) -> f64 {
    1e-10 * noise_cov.trace() / noise_cov.rows() as f64
}

/// Gaussian model `N(μ̄_B, Σ̄_B)` for the model reduction error, with the
/// factor of the inflated covariance `Σ̄_B + ε_jit I + Σ_e` kept current.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AemState {
    mean: Vec<f64>,
    cov: Matrix,
    count: u64,
    jitter: f64,
    mean_mode: MeanMode,
    noise_cov: Matrix,
    factor: Cholesky,
    last_change: f64,
}

impl AemState {
    /// Empty state (`n = 0`) with the default jitter.
    pub fn new(noise_cov: &Matrix, mean_mode: MeanMode) -> Result<Self> {
        Self::with_jitter(noise_cov, mean_mode, default_jitter(noise_cov))
    }

    pub fn with_jitter(noise_cov: &Matrix, mean_mode: MeanMode, jitter: f64) -> Result<Self> {
        if !noise_cov.is_square() {
            return Err(invalid("noise covariance must be square"));
        }
        if !(jitter >= 0.0 && jitter.is_finite()) {
            return Err(invalid("AEM jitter must be nonnegative"));
        }
        let m = noise_cov.rows();
        let mut s = Self {
            mean: vec![0.0; m],
            cov: Matrix::zeros(m, m),
            count: 0,
            jitter,
            mean_mode,
            noise_cov: noise_cov.clone(),
            factor: Cholesky::new(noise_cov)?,
            last_change: 0.0,
        };
        s.refresh()?;
        Ok(s)
    }

    /// State with given statistics, e.g. estimated over the prior.
    pub fn from_moments(noise_cov: &Matrix, mean: Vec<f64>, cov: Matrix, count: u64) -> Result<Self> {
        let mut s = Self::new(noise_cov, MeanMode::Free)?;
        check_dim("AEM mean", s.dim(), mean.len())?;
        check_dim("AEM covariance", s.dim(), cov.rows())?;
        check_dim("AEM covariance", s.dim(), cov.cols())?;
        if !cov.is_finite() || mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("AEM statistics"));
        }
        s.mean = mean;
        s.cov = cov;
        s.cov.symmetrize();
        s.count = count;
        s.refresh()?;
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Stored covariance estimate, without jitter.
    pub fn covariance(&self) -> &Matrix {
        &self.cov
    }

    /// `Σ̄_B + ε_jit I`.
    pub fn effective_covariance(&self) -> Matrix {
        let mut c = self.cov.clone();
        c.add_to_diagonal(self.jitter);
        c
    }

    /// `Σ̄_B + ε_jit I + Σ_e`.
    pub fn inflated_covariance(&self) -> Matrix {
        self.effective_covariance()
            .add(&self.noise_cov)
            .expect("dimensions checked at construction")
    }

    pub fn factor(&self) -> &Cholesky {
        &self.factor
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn mean_mode(&self) -> MeanMode {
        self.mean_mode
    }

    /// Frobenius norm of the covariance change made by the last update.
    pub fn last_change(&self) -> f64 {
        self.last_change
    }

    fn refresh(&mut self) -> Result<()> {
        self.factor = Cholesky::new(&self.inflated_covariance())?;
        Ok(())
    }

    /// Recursive posterior update with one error sample `b`:
    /// `μ̄_n = μ̄_{n−1} + δ/n`, `Σ̄_n = (n−2)/(n−1) Σ̄_{n−1} + δδᵀ/n`, `δ = b − μ̄_{n−1}`.
    pub fn update_posterior_aem(&mut self, b: &[f64]) -> Result<()> {
        if self.mean_mode != MeanMode::Free {
            return Err(invalid("posterior AEM update needs a free mean"));
        }
        self.check_sample(b)?;
        self.count += 1;
        let n = self.count as f64;
        let delta: Vec<f64> = b.iter().zip(&self.mean).map(|(b, m)| b - m).collect();
        for (m, d) in self.mean.iter_mut().zip(&delta) {
            *m += d / n;
        }
        if self.count == 1 {
            self.last_change = self.cov.frobenius_norm();
            self.cov = Matrix::zeros(self.dim(), self.dim());
        } else {
            self.last_change = self.rank_one_update((n - 2.0) / (n - 1.0), &delta, 1.0 / n);
        }
        self.refresh()
    }

    /// Zero-mean recursion over error increments:
    /// `Σ̂_k = ((k−1) Σ̂_{k−1} + b bᵀ) / k` after `k` increments.
    pub fn update_statedep_cov(&mut self, b_step: &[f64]) -> Result<()> {
        if self.mean_mode != MeanMode::PinnedToZero {
            return Err(invalid("state-dependent covariance update needs a pinned mean"));
        }
        self.check_sample(b_step)?;
        self.count += 1;
        let k = self.count as f64;
        self.last_change = self.rank_one_update((k - 1.0) / k, b_step, 1.0 / k);
        self.refresh()
    }

    fn check_sample(&self, b: &[f64]) -> Result<()> {
        check_dim("model error", self.dim(), b.len())?;
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model error sample"));
        }
        Ok(())
    }

    /// `C ← shrink·C + w·v vᵀ`, kept exactly symmetric. Returns ‖ΔC‖_F.
    fn rank_one_update(&mut self, shrink: f64, v: &[f64], w: f64) -> f64 {
        let m = self.dim();
        let mut change = 0.0;
        for i in 0..m {
            for k in i..m {
                let old = self.cov[(i, k)];
                let new = shrink * old + w * v[i] * v[k];
                let diff = new - old;
                change += if i == k { diff * diff } else { 2.0 * diff * diff };
                self.cov[(i, k)] = new;
                self.cov[(k, i)] = new;
            }
        }
        change.sqrt()
    }

    /// Gaussian log-likelihood of `output + μ̄_B` against the data under the
    /// inflated covariance.
    pub fn log_likelihood(&self, posterior: &Posterior, output: &[f64]) -> Result<f64> {
        check_dim("model output", self.dim(), output.len())?;
        let shifted: Vec<f64> = output.iter().zip(&self.mean).map(|(o, m)| o + m).collect();
        posterior.misfit_with(&shifted, &self.factor)
    }

    /// Structured text snapshot: one `key value...` line per field.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mode = match self.mean_mode {
            MeanMode::Free => "free",
            MeanMode::PinnedToZero => "pinned",
        };
        let _ = writeln!(s, "dim {}", self.dim());
        let _ = writeln!(s, "count {}", self.count);
        let _ = writeln!(s, "mean_mode {mode}");
        let _ = writeln!(s, "jitter {:?}", self.jitter);
        let _ = write!(s, "mean");
        for v in &self.mean {
            let _ = write!(s, " {v:?}");
        }
        let _ = write!(s, "\ncovariance");
        for v in self.cov.as_slice() {
            let _ = write!(s, " {v:?}");
        }
        s.push('\n');
        s
    }

    /// Inverse of [`to_text`](Self::to_text); the noise covariance is
    /// supplied by the caller.
    pub fn from_text(text: &str, noise_cov: &Matrix) -> Result<Self> {
        let mut dim = None;
        let mut count = None;
        let mut mode = None;
        let mut jitter = None;
        let mut mean = None;
        let mut cov = None;
        let bad = |what: &str| invalid(format!("malformed AEM snapshot: {what}"));
        let floats = |it: core::str::SplitWhitespace<'_>| -> Result<Vec<f64>> {
            it.map(|t| t.parse::<f64>().map_err(|_| bad("number")))
                .collect()
        };
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let mut it = line.split_whitespace();
            let key = it.next().unwrap_or_default();
            match key {
                "dim" => dim = it.next().and_then(|v| v.parse::<usize>().ok()),
                "count" => count = it.next().and_then(|v| v.parse::<u64>().ok()),
                "mean_mode" => {
                    mode = match it.next() {
                        Some("free") => Some(MeanMode::Free),
                        Some("pinned") => Some(MeanMode::PinnedToZero),
                        _ => return Err(bad("mean_mode")),
                    }
                }
                "jitter" => jitter = it.next().and_then(|v| v.parse::<f64>().ok()),
                "mean" => mean = Some(floats(it)?),
                "covariance" => cov = Some(floats(it)?),
                other => return Err(bad(other)),
            }
        }
        let dim = dim.ok_or_else(|| bad("dim"))?;
        let mean = mean.ok_or_else(|| bad("mean"))?;
        let cov = cov.ok_or_else(|| bad("covariance"))?;
        check_dim("AEM snapshot mean", dim, mean.len())?;
        check_dim("AEM snapshot covariance", dim * dim, cov.len())?;
        check_dim("noise covariance", dim, noise_cov.rows())?;
        let mode = mode.ok_or_else(|| bad("mean_mode"))?;
        if mode == MeanMode::PinnedToZero && mean.iter().any(|v| *v != 0.0) {
            return Err(bad("pinned mean must be zero"));
        }
        let mut s = Self::with_jitter(noise_cov, mode, jitter.ok_or_else(|| bad("jitter"))?)?;
        s.mean = mean;
        s.cov = Matrix::from_row_major(dim, dim, cov)?;
        s.count = count.ok_or_else(|| bad("count"))?;
        s.refresh()?;
        Ok(s)
    }
}

/// Sample mean and covariance of `B` over `l` prior draws. Draws whose
/// forward evaluation fails are skipped with a warning.
pub fn build_prior_aem<R: Rng + ?Sized>(posterior: &Posterior, l: usize, rng: &mut R) -> Result<AemState> {
    if l < 2 {
        return Err(invalid("prior AEM needs at least 2 samples"));
    }
    let mut acc = AemState::new(posterior.noise().covariance(), MeanMode::Free)?;
    let pair = posterior.pair();
    let mut skipped = 0usize;
    for _ in 0..l {
        let x = posterior.prior().sample(rng)?;
        let b = pair
            .eval_fine(&x)
            .and_then(|f| pair.eval_coarse(&x).and_then(|c| model_error(&f, &c)));
        match b {
            Ok(b) if b.iter().all(|v| v.is_finite()) => acc.update_posterior_aem(&b)?,
            Ok(_) => {
                skipped += 1;
                log::warn!("prior AEM sample at {x:?} gave a non-finite model error; skipped");
            }
            Err(e) => {
                skipped += 1;
                log::warn!("prior AEM sample skipped: {e}");
            }
        }
    }
    if acc.count() < 2 {
        return Err(invalid(format!(
            "prior AEM: only {} of {l} samples succeeded",
            acc.count()
        )));
    }
    if skipped > 0 {
        log::warn!("prior AEM used {} of {l} samples", acc.count());
    }
    Ok(acc)
}

/// Coarse-model evaluation of an approximate posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseEval {
    pub log_prior: f64,
    pub log_likelihood: f64,
    /// `None` when the prior short-circuited the evaluation.
    pub coarse: Option<Vec<f64>>,
}

impl CoarseEval {
    pub fn log_density(&self) -> f64 {
        self.log_prior + self.log_likelihood
    }
}

fn coarse_eval(
    posterior: &Posterior,
    y: &[f64],
    like: impl FnOnce(&[f64]) -> Result<f64>,
) -> Result<CoarseEval> {
    check_dim("parameter", posterior.param_dim(), y.len())?;
    let log_prior = posterior.log_prior(y);
    if log_prior == f64::NEG_INFINITY {
        return Ok(CoarseEval {
            log_prior,
            log_likelihood: f64::NEG_INFINITY,
            coarse: None,
        });
    }
    let coarse = posterior.pair().eval_coarse(y)?;
    let log_likelihood = like(&coarse)?;
    Ok(CoarseEval {
        log_prior,
        log_likelihood,
        coarse: Some(coarse),
    })
}

pub fn approx1_log_post(posterior: &Posterior, y: &[f64]) -> Result<CoarseEval> {
    coarse_eval(posterior, y, |c| posterior.log_likelihood(c))
}

pub fn approx2_log_post(posterior: &Posterior, y: &[f64], aem: &AemState) -> Result<CoarseEval> {
    coarse_eval(posterior, y, |c| aem.log_likelihood(posterior, c))
}

/// Same functional form as [`approx2_log_post`], with adapted statistics.
pub fn approx3_log_post(posterior: &Posterior, y: &[f64], aem: &AemState) -> Result<CoarseEval> {
    approx2_log_post(posterior, y, aem)
}

pub fn approx4_log_post(posterior: &Posterior, y: &[f64], fine_x: &[f64], coarse_x: &[f64]) -> Result<CoarseEval> {
    coarse_eval(posterior, y, |c| {
        posterior.log_likelihood(&state_dep_forward(Some(fine_x), Some(coarse_x), c)?)
    })
}

pub fn approx5_log_post(
    posterior: &Posterior,
    y: &[f64],
    fine_x: &[f64],
    coarse_x: &[f64],
    aem: &AemState,
) -> Result<CoarseEval> {
    coarse_eval(posterior, y, |c| {
        aem.log_likelihood(posterior, &state_dep_forward(Some(fine_x), Some(coarse_x), c)?)
    })
}

/// A reduced-model approximation together with its adaptation state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Approximation {
    scheme: Scheme,
    aem: Option<AemState>,
    input: ErrorInput,
    freeze_after: Option<u64>,
    previous_error: Option<Vec<f64>>,
    observed: u64,
}

impl Approximation {
    pub fn new(scheme: Scheme, aem: Option<AemState>) -> Result<Self> {
        match (&aem, scheme) {
            (None, Scheme::Exact | Scheme::Approx1 | Scheme::Approx4) => {}
            (Some(a), Scheme::Approx2 | Scheme::Approx3) if a.mean_mode() == MeanMode::Free => {}
            (Some(a), Scheme::Approx5) if a.mean_mode() == MeanMode::PinnedToZero => {}
            _ => return Err(invalid(format!("{scheme} cannot carry this AEM"))),
        }
        Ok(Self {
            scheme,
            aem,
            input: ErrorInput::Plain,
            freeze_after: None,
            previous_error: None,
            observed: 0,
        })
    }

    /// A scheme with an empty AEM where it needs one.
    pub fn fresh(scheme: Scheme, noise_cov: &Matrix) -> Result<Self> {
        let aem = match scheme {
            Scheme::Approx2 => return Err(invalid("approx2 needs a prior AEM; use build_prior_aem")),
            Scheme::Approx3 => Some(AemState::new(noise_cov, MeanMode::Free)?),
            Scheme::Approx5 => Some(AemState::new(noise_cov, MeanMode::PinnedToZero)?),
            _ => None,
        };
        Self::new(scheme, aem)
    }

    pub fn with_error_input(mut self, input: ErrorInput) -> Self {
        self.input = input;
        self
    }

    /// Stop adapting once this many states have been observed.
    pub fn with_freeze_after(mut self, n: Option<u64>) -> Self {
        self.freeze_after = n;
        self
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn aem(&self) -> Option<&AemState> {
        self.aem.as_ref()
    }

    pub fn error_input(&self) -> ErrorInput {
        self.input
    }

    pub fn is_frozen(&self) -> bool {
        self.freeze_after.is_some_and(|k| self.observed >= k)
    }

    /// Approximate log-likelihood at a point with coarse output `coarse_y`,
    /// anchored at a state with cached outputs `(fine_x, coarse_x)`.
    pub fn log_likelihood(
        &self,
        posterior: &Posterior,
        fine_x: Option<&[f64]>,
        coarse_x: Option<&[f64]>,
        coarse_y: &[f64],
    ) -> Result<f64> {
        let out;
        let output = if self.scheme.is_state_dependent() {
            out = state_dep_forward(fine_x, coarse_x, coarse_y)?;
            &out[..]
        } else {
            coarse_y
        };
        match &self.aem {
            Some(aem) => aem.log_likelihood(posterior, output),
            None => posterior.log_likelihood(output),
        }
    }

    /// Fold in the current chain state. No-op for non-adaptive schemes or
    /// once frozen. Returns the covariance change norm of the update.
    pub fn observe(&mut self, fine: &[f64], coarse: &[f64]) -> Result<f64> {
        if !self.scheme.is_adaptive() || self.is_frozen() {
            return Ok(0.0);
        }
        self.observed += 1;
        let b = model_error(fine, coarse)?;
        let increment = self
            .previous_error
            .as_ref()
            .map(|p| b.iter().zip(p).map(|(a, c)| a - c).collect::<Vec<f64>>());
        let aem = self.aem.as_mut().expect("adaptive schemes carry an AEM");
        let change = match (self.scheme, self.input, increment) {
            (Scheme::Approx3, ErrorInput::Plain, _) => {
                aem.update_posterior_aem(&b)?;
                aem.last_change()
            }
            (Scheme::Approx3, ErrorInput::Increment, Some(step)) => {
                aem.update_posterior_aem(&step)?;
                aem.last_change()
            }
            (Scheme::Approx5, _, Some(step)) => {
                aem.update_statedep_cov(&step)?;
                aem.last_change()
            }
            _ => 0.0,
        };
        self.previous_error = Some(b);
        Ok(change)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::analytic::AnalyticSpec;
    use crate::rng::stream;
    use crate::target::{Bounds, ForwardModel, ForwardPair, NoiseModel, Prior};
    use crate::ForwardError;
    use alloc::sync::Arc;

    struct Square;
    impl ForwardModel for Square {
        fn input_dim(&self) -> usize {
            1
        }
        fn output_dim(&self) -> usize {
            1
        }
        fn evaluate(&self, x: &[f64]) -> core::result::Result<Vec<f64>, ForwardError> {
            Ok(vec![x[0] * x[0]])
        }
    }

    struct Ident;
    impl ForwardModel for Ident {
        fn input_dim(&self) -> usize {
            1
        }
        fn output_dim(&self) -> usize {
            1
        }
        fn evaluate(&self, x: &[f64]) -> core::result::Result<Vec<f64>, ForwardError> {
            Ok(vec![x[0]])
        }
    }

    fn scalar_posterior(noise_var: f64) -> Posterior {
        Posterior::new(
            ForwardPair::new(Arc::new(Square), Arc::new(Ident)).unwrap(),
            NoiseModel::diagonal(&[noise_var]).unwrap(),
            Prior::Box(Bounds::uniform(1, -10.0, 10.0).unwrap()),
            vec![0.0],
        )
        .unwrap()
    }

    #[test]
    fn model_error_hand_values() {
        assert_eq!(model_error(&[9.0], &[3.0]).unwrap(), vec![6.0]);
        assert_eq!(model_error(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), vec![0.0, 0.0]);
        assert!(model_error(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn state_dep_forward_hand_values() {
        // F(x) = x², F*(x) = x, x = 2, y = 3
        assert_eq!(state_dep_forward(Some(&[4.0]), Some(&[2.0]), &[3.0]).unwrap(), vec![5.0]);
        // y = x reproduces F(x)
        assert_eq!(state_dep_forward(Some(&[4.0]), Some(&[2.0]), &[2.0]).unwrap(), vec![4.0]);
        assert!(state_dep_forward(None, Some(&[2.0]), &[3.0]).is_err());
    }

    #[test]
    fn first_update_sets_mean_and_jitter_covariance() {
        let noise = Matrix::identity(2).scaled(4.0);
        let mut a = AemState::new(&noise, MeanMode::Free).unwrap();
        a.update_posterior_aem(&[1.0, -2.0]).unwrap();
        assert_eq!(a.mean(), &[1.0, -2.0]);
        assert_eq!(a.effective_covariance(), Matrix::identity(2).scaled(4e-10));
        for _ in 0..10 {
            a.update_posterior_aem(&[1.0, -2.0]).unwrap();
        }
        assert_eq!(a.covariance().max_abs(), 0.0);
    }

    #[test]
    fn statedep_two_sample_case_is_outer_product() {
        let noise = Matrix::identity(2);
        let mut a = AemState::new(&noise, MeanMode::PinnedToZero).unwrap();
        a.update_statedep_cov(&[1.0, 3.0]).unwrap();
        assert_eq!(a.covariance(), &Matrix::outer(&[1.0, 3.0], 1.0));
        a.update_statedep_cov(&[0.0, 0.0]).unwrap();
        assert_eq!(a.covariance(), &Matrix::outer(&[1.0, 3.0], 0.5));
        assert_eq!(a.mean(), &[0.0, 0.0]);
        assert!(a.update_posterior_aem(&[1.0, 1.0]).is_err());
    }

    #[test]
    fn inflated_quadratic_coefficient() {
        // Σ_e = 1, Σ_B = 3, zero data: log-likelihood of output 1 is −1/(2·4)
        let post = scalar_posterior(1.0);
        let aem = AemState::from_moments(&Matrix::identity(1), vec![0.0], Matrix::from_diagonal(&[3.0]), 10)
            .unwrap();
        let ll = aem.log_likelihood(&post, &[1.0]).unwrap();
        assert!((ll + 1.0 / 8.0).abs() < 1e-9, "{ll}");
    }

    #[test]
    fn snapshot_round_trips() {
        let noise = Matrix::identity(3).scaled(0.3);
        let mut a = AemState::new(&noise, MeanMode::Free).unwrap();
        for k in 0..7 {
            let t = k as f64 * 0.37;
            a.update_posterior_aem(&[t.sin(), t.cos() / 3.0, 1.0 / (1.0 + t)]).unwrap();
        }
        let b = AemState::from_text(&a.to_text(), &noise).unwrap();
        assert_eq!(a.mean(), b.mean());
        assert_eq!(a.covariance(), b.covariance());
        assert_eq!(a.factor(), b.factor());
        assert_eq!((a.count(), a.jitter(), a.mean_mode()), (b.count(), b.jitter(), b.mean_mode()));
        assert!(AemState::from_text("dim 2\nbogus 1\n", &noise).is_err());
    }

    #[test]
    fn prior_aem_two_samples_hand_check() {
        let post = scalar_posterior(1.0);
        let mut rng = stream(3, 0);
        let aem = build_prior_aem(&post, 2, &mut rng).unwrap();
        let mut rng = stream(3, 0);
        let b: Vec<f64> = (0..2)
            .map(|_| {
                let x = post.prior().sample(&mut rng).unwrap()[0];
                x * x - x
            })
            .collect();
        assert!((aem.mean()[0] - (b[0] + b[1]) / 2.0).abs() < 1e-12);
        let want = (b[0] - b[1]) * (b[0] - b[1]) / 2.0;
        assert!((aem.covariance()[(0, 0)] - want).abs() < 1e-12 * want.max(1.0));
        assert_eq!(post.pair().counters().fine(), 2);
        assert_eq!(post.pair().counters().coarse(), 2);
        assert!(build_prior_aem(&post, 1, &mut rng).is_err());
    }

    #[test]
    fn prior_aem_mean_on_analytic_pair() {
        // E_prior[b(x)] under N(0, 4 I) is (4, 0, 4).
        let spec = AnalyticSpec::default();
        let post = spec.posterior(vec![0.0; 3]).unwrap();
        let aem = build_prior_aem(&post, 10_000, &mut stream(11, 0)).unwrap();
        let want = [0.4, 0.0, 0.4];
        assert!((aem.mean()[0] - want[0]).abs() < 0.05 * want[0]);
        assert!((aem.mean()[2] - want[2]).abs() < 0.05 * want[2]);
        assert!(aem.mean()[1].abs() < 0.02);
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in Scheme::ALL {
            assert_eq!(s.name().parse::<Scheme>().unwrap(), s);
        }
        assert!("approx6".parse::<Scheme>().is_err());
    }

    #[test]
    fn approximation_rejects_mismatched_aem() {
        let noise = Matrix::identity(1);
        let pinned = AemState::new(&noise, MeanMode::PinnedToZero).unwrap();
        assert!(Approximation::new(Scheme::Approx3, Some(pinned.clone())).is_err());
        assert!(Approximation::new(Scheme::Approx5, Some(pinned)).is_ok());
        assert!(Approximation::new(Scheme::Approx2, None).is_err());
    }

    #[test]
    fn approx5_sees_zero_increment_for_repeated_state() {
        let noise = Matrix::identity(1);
        let mut a = Approximation::fresh(Scheme::Approx5, &noise).unwrap();
        a.observe(&[4.0], &[2.0]).unwrap();
        assert_eq!(a.aem().unwrap().count(), 0);
        a.observe(&[9.0], &[3.0]).unwrap();
        assert_eq!(a.aem().unwrap().covariance()[(0, 0)], 16.0);
        a.observe(&[9.0], &[3.0]).unwrap();
        assert_eq!(a.aem().unwrap().covariance()[(0, 0)], 8.0);
    }

    #[test]
    fn freeze_stops_adaptation() {
        let noise = Matrix::identity(1);
        let mut a = Approximation::fresh(Scheme::Approx3, &noise)
            .unwrap()
            .with_freeze_after(Some(2));
        for v in [1.0, 2.0, 3.0, 4.0] {
            a.observe(&[v], &[0.0]).unwrap();
        }
        assert_eq!(a.aem().unwrap().count(), 2);
        assert_eq!(a.aem().unwrap().mean(), &[1.5]);
    }
}
