//! Metropolis-Hastings, delayed acceptance (DA) and adaptive delayed
//! acceptance (ADA) samplers.
//!
//! A DA iteration screens each proposal with an approximate posterior π*
//! and only evaluates the fine model for proposals that pass. The second
//! stage accepts with
//!
//! ```text
//! β(x, y) = min{1, π(y) α(y, x) / (π(x) α(x, y))}
//! ```
//!
//! where `α(y, x)` is the first-stage probability of the reverse move,
//! anchored at `y` for state-dependent approximations. All proposals are
//! symmetric, so proposal densities cancel.
//!
//! With a grouped (GCAM) proposal each group is updated by its own DA step,
//! so an iteration over `L` groups makes `L` stage-one attempts.

use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::aem::{Approximation, Scheme};
use crate::error::{check_dim, invalid, Error, Result};
use crate::proposal::ProposalAdaptState;
use crate::rng::ChainRng;
use crate::target::Posterior;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KernelKind {
    Mh,
    Da,
    Ada,
}

impl KernelKind {
    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Mh => "mh",
            KernelKind::Da => "da",
            KernelKind::Ada => "ada",
        }
    }
}

impl core::str::FromStr for KernelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mh" => Ok(KernelKind::Mh),
            "da" => Ok(KernelKind::Da),
            "ada" => Ok(KernelKind::Ada),
            _ => Err(invalid(alloc::format!("unknown kernel '{s}'"))),
        }
    }
}

/// Default forward-failure retry budget per iteration.
pub const DEFAULT_MAX_RETRIES: u32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub kernel: KernelKind,
    pub adapt_proposal: bool,
    pub adapt_aem: bool,
    /// Forward failures tolerated within one iteration before aborting.
    pub max_retries: u32,
    /// Coarse-only Metropolis iterations run before the initial fine
    /// evaluation.
    pub warm_start: u64,
}

impl SamplerConfig {
    /// MH adapts AM/GCAM proposals, DA adapts nothing, ADA adapts both.
    pub fn for_kernel(kernel: KernelKind) -> Self {
        Self {
            kernel,
            adapt_proposal: kernel != KernelKind::Da,
            adapt_aem: kernel == KernelKind::Ada,
            max_retries: DEFAULT_MAX_RETRIES,
            warm_start: 0,
        }
    }
}

/// Checks a kernel/scheme pairing.
pub fn validate_combination(kernel: KernelKind, scheme: Scheme) -> Result<()> {
    match (kernel, scheme) {
        (KernelKind::Da | KernelKind::Ada, Scheme::Exact) => {
            Err(invalid("scheme 'exact' is only valid with kernel 'mh'"))
        }
        (KernelKind::Mh | KernelKind::Da, Scheme::Approx3 | Scheme::Approx5) => Err(invalid(alloc::format!(
            "scheme '{scheme}' adapts its error model and requires kernel 'ada'"
        ))),
        (KernelKind::Mh, Scheme::Approx4) => Err(invalid(
            "scheme 'approx4' is state-dependent and needs a delayed-acceptance kernel",
        )),
        _ => Ok(()),
    }
}

/// Current chain state with the model outputs and densities that belong to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub x: Vec<f64>,
    pub fine: Option<Vec<f64>>,
    pub coarse: Option<Vec<f64>>,
    pub log_prior: f64,
    /// Log-likelihood under the density the chain targets.
    pub log_like: f64,
}

impl ChainState {
    pub fn log_post(&self) -> f64 {
        self.log_prior + self.log_like
    }
}

/// One row of the chain trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRecord {
    /// 1-based iteration index.
    pub iteration: u64,
    pub x: Vec<f64>,
    pub log_post: f64,
    pub log_like: f64,
    /// Stage-one (or plain MH) acceptances in this iteration.
    pub acc1: u32,
    /// Stage-two acceptances; `None` for MH.
    pub acc2: Option<u32>,
    /// Moves attempted in this iteration (number of proposal blocks).
    pub attempts: u32,
    /// Cumulative fine-model evaluations of this chain.
    pub n_fine: u64,
    /// Cumulative coarse-model evaluations of this chain.
    pub n_coarse: u64,
    pub sigma: Vec<f64>,
}

/// A record plus adaptation instrumentation.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub record: ChainRecord,
    /// ‖ΔΣ‖_F of the AEM covariance in this iteration.
    pub aem_change: f64,
    /// AEM sample count after the update.
    pub aem_count: u64,
    /// ‖ΔΣ‖_F of the proposal running covariance in this iteration.
    pub proposal_change: f64,
    pub proposal_count: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainCounters {
    pub fine: u64,
    pub coarse: u64,
    pub attempts: u64,
    pub acc1: u64,
    pub acc2: u64,
    pub forward_failures: u64,
}

/// Everything needed to continue a chain bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: SamplerConfig,
    pub iteration: u64,
    pub state: ChainState,
    pub proposal: ProposalAdaptState,
    pub approximation: Approximation,
    pub rng: ChainRng,
    pub counters: ChainCounters,
}

/// Outcome of one block move.
struct BlockOutcome {
    acc1: bool,
    acc2: bool,
}

pub struct Sampler {
    posterior: Arc<Posterior>,
    config: SamplerConfig,
    proposal: ProposalAdaptState,
    approx: Approximation,
    state: ChainState,
    rng: ChainRng,
    iteration: u64,
    counters: ChainCounters,
}

impl core::fmt::Debug for Sampler {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Sampler")
            .field("config", &self.config)
            .field("scheme", &self.approx.scheme())
            .field("iteration", &self.iteration)
            .field("state", &self.state)
            .finish_non_exhaustive()
    }
}

/// Log of π*_x(y) / π*_x(x) for the first stage.
///
/// `x` is `(log prior, cached fine output, cached coarse output)` and `y` is
/// `(log prior, coarse output)`. Both densities go through the same formula,
/// so the ratio at `y = x` is exactly zero in log space.
pub fn stage_one_log_ratio(
    approx: &Approximation,
    posterior: &Posterior,
    x: (f64, Option<&[f64]>, &[f64]),
    y: (f64, &[f64]),
) -> Result<f64> {
    let (lp_x, fine_x, coarse_x) = x;
    let (lp_y, coarse_y) = y;
    let at_y = approx.log_likelihood(posterior, fine_x, Some(coarse_x), coarse_y)?;
    let at_x = approx.log_likelihood(posterior, fine_x, Some(coarse_x), coarse_x)?;
    Ok((lp_y + at_y) - (lp_x + at_x))
}

fn accept(rng: &mut ChainRng, log_ratio: f64) -> bool {
    let u: f64 = rng.random();
    // NaN ratios (e.g. −∞ − −∞) reject
    u < f64::min(0.0, log_ratio).exp()
}

impl Sampler {
    /// Starts a chain at `x0`, optionally after a coarse-only warm start.
    /// The initial state is evaluated eagerly.
    pub fn new(
        posterior: Arc<Posterior>,
        config: SamplerConfig,
        proposal: ProposalAdaptState,
        approx: Approximation,
        x0: Vec<f64>,
        rng: ChainRng,
    ) -> Result<Self> {
        validate_combination(config.kernel, approx.scheme())?;
        check_dim("initial state", posterior.param_dim(), x0.len())?;
        check_dim("proposal", posterior.param_dim(), proposal.dim())?;
        if let Some(aem) = approx.aem() {
            check_dim("error model", posterior.data_dim(), aem.dim())?;
        }
        let placeholder = ChainState {
            x: x0.clone(),
            fine: None,
            coarse: None,
            log_prior: f64::NEG_INFINITY,
            log_like: f64::NEG_INFINITY,
        };
        let mut s = Self {
            posterior,
            config,
            proposal,
            approx,
            state: placeholder,
            rng,
            iteration: 0,
            counters: ChainCounters::default(),
        };
        let mut x = x0;
        if s.config.warm_start > 0 {
            x = s.warm_start(x)?;
        }
        s.state = s.evaluate_initial(x)?;
        if s.config.adapt_proposal {
            s.proposal.update_running_cov(&s.state.x)?;
        }
        if s.config.adapt_aem {
            if let (Some(f), Some(c)) = (&s.state.fine, &s.state.coarse) {
                s.approx.observe(f, c)?;
            }
        }
        Ok(s)
    }

    pub fn from_checkpoint(posterior: Arc<Posterior>, cp: Checkpoint) -> Result<Self> {
        validate_combination(cp.config.kernel, cp.approximation.scheme())?;
        check_dim("checkpoint state", posterior.param_dim(), cp.state.x.len())?;
        Ok(Self {
            posterior,
            config: cp.config,
            proposal: cp.proposal,
            approx: cp.approximation,
            state: cp.state,
            rng: cp.rng,
            iteration: cp.iteration,
            counters: cp.counters,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            iteration: self.iteration,
            state: self.state.clone(),
            proposal: self.proposal.clone(),
            approximation: self.approx.clone(),
            rng: self.rng.clone(),
            counters: self.counters,
        }
    }

    pub fn posterior(&self) -> &Posterior {
        &self.posterior
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn proposal(&self) -> &ProposalAdaptState {
        &self.proposal
    }

    pub fn approximation(&self) -> &Approximation {
        &self.approx
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn counters(&self) -> ChainCounters {
        self.counters
    }

    fn targets_exact(&self) -> bool {
        self.config.kernel != KernelKind::Mh || self.approx.scheme() == Scheme::Exact
    }

    fn eval_fine(&mut self, x: &[f64]) -> Result<Vec<f64>> {
        match self.posterior.pair().eval_fine(x) {
            Ok(v) => {
                self.counters.fine += 1;
                Ok(v)
            }
            Err(e) => {
                self.counters.forward_failures += 1;
                Err(e)
            }
        }
    }

    fn eval_coarse(&mut self, x: &[f64]) -> Result<Vec<f64>> {
        match self.posterior.pair().eval_coarse(x) {
            Ok(v) => {
                self.counters.coarse += 1;
                Ok(v)
            }
            Err(e) => {
                self.counters.forward_failures += 1;
                Err(e)
            }
        }
    }

    fn evaluate_initial(&mut self, x: Vec<f64>) -> Result<ChainState> {
        let log_prior = self.posterior.log_prior(&x);
        if log_prior == f64::NEG_INFINITY {
            return Err(invalid("initial state lies outside the prior support"));
        }
        let needs_coarse = self.config.kernel != KernelKind::Mh || self.approx.scheme() != Scheme::Exact;
        let coarse = if needs_coarse { Some(self.eval_coarse(&x)?) } else { None };
        let fine = if self.targets_exact() { Some(self.eval_fine(&x)?) } else { None };
        let log_like = match &fine {
            Some(f) => self.posterior.log_likelihood(f)?,
            None => self.approx.log_likelihood(
                &self.posterior,
                None,
                None,
                coarse.as_deref().expect("coarse evaluated"),
            )?,
        };
        if log_like == f64::NEG_INFINITY || log_like.is_nan() {
            return Err(invalid("initial state has zero posterior density"));
        }
        Ok(ChainState {
            x,
            fine,
            coarse,
            log_prior,
            log_like,
        })
    }

    /// Metropolis on the plain coarse posterior from `x`; returns the end point.
    fn warm_start(&mut self, x: Vec<f64>) -> Result<Vec<f64>> {
        let post = self.posterior.clone();
        let mut lp = post.log_prior(&x);
        if lp == f64::NEG_INFINITY {
            return Err(invalid("initial state lies outside the prior support"));
        }
        let c = self.eval_coarse(&x)?;
        let mut ll = post.log_likelihood(&c)?;
        let mut x = x;
        for n in 1..=self.config.warm_start {
            for j in 0..self.proposal.blocks() {
                let y = self.proposal.propose_block(&x, j, &mut self.rng)?;
                let lp_y = post.log_prior(&y);
                let mut ok = false;
                if lp_y > f64::NEG_INFINITY {
                    let cy = self.eval_coarse(&y)?;
                    let ll_y = post.log_likelihood(&cy)?;
                    if accept(&mut self.rng, lp_y + ll_y - lp - ll) {
                        x = y;
                        lp = lp_y;
                        ll = ll_y;
                        ok = true;
                    }
                }
                if self.config.adapt_proposal {
                    self.proposal.record_block(j, ok);
                }
            }
            if self.config.adapt_proposal {
                self.proposal.update_running_cov(&x)?;
                self.proposal.end_iteration(n);
            }
        }
        Ok(x)
    }

    fn mh_block(&mut self, j: usize) -> Result<BlockOutcome> {
        let y = self.proposal.propose_block(&self.state.x, j, &mut self.rng)?;
        let log_prior = self.posterior.log_prior(&y);
        if log_prior == f64::NEG_INFINITY {
            return Ok(BlockOutcome { acc1: false, acc2: false });
        }
        let (fine, coarse, log_like) = if self.approx.scheme() == Scheme::Exact {
            let f = self.eval_fine(&y)?;
            let ll = self.posterior.log_likelihood(&f)?;
            (Some(f), None, ll)
        } else {
            let c = self.eval_coarse(&y)?;
            let ll = self.approx.log_likelihood(&self.posterior, None, None, &c)?;
            (None, Some(c), ll)
        };
        let ok = accept(&mut self.rng, log_prior + log_like - self.state.log_post());
        if ok {
            self.state = ChainState {
                x: y,
                fine,
                coarse,
                log_prior,
                log_like,
            };
        }
        Ok(BlockOutcome { acc1: ok, acc2: ok })
    }

    fn da_block(&mut self, j: usize) -> Result<BlockOutcome> {
        let reject = BlockOutcome { acc1: false, acc2: false };
        let y = self.proposal.propose_block(&self.state.x, j, &mut self.rng)?;
        let lp_y = self.posterior.log_prior(&y);
        if lp_y == f64::NEG_INFINITY {
            return Ok(reject);
        }
        let coarse_y = self.eval_coarse(&y)?;
        let post = self.posterior.clone();
        let fx = self.state.fine.clone();
        let cx = self
            .state
            .coarse
            .clone()
            .ok_or_else(|| invalid("delayed acceptance needs the cached coarse output"))?;
        let (lp_x, lpost_x) = (self.state.log_prior, self.state.log_post());
        let log_alpha_xy = f64::min(
            0.0,
            stage_one_log_ratio(&self.approx, &post, (lp_x, fx.as_deref(), &cx), (lp_y, &coarse_y))?,
        );
        if !accept(&mut self.rng, log_alpha_xy) {
            return Ok(reject);
        }
        let fine_y = self.eval_fine(&y)?;
        let ll_y = post.log_likelihood(&fine_y)?;
        let log_alpha_yx = f64::min(
            0.0,
            stage_one_log_ratio(&self.approx, &post, (lp_y, Some(&fine_y), &coarse_y), (lp_x, &cx))?,
        );
        let log_beta = (lp_y + ll_y + log_alpha_yx) - (lpost_x + log_alpha_xy);
        let ok = ll_y > f64::NEG_INFINITY && accept(&mut self.rng, log_beta);
        if ok {
            self.state = ChainState {
                x: y,
                fine: Some(fine_y),
                coarse: Some(coarse_y),
                log_prior: lp_y,
                log_like: ll_y,
            };
        }
        Ok(BlockOutcome { acc1: true, acc2: ok })
    }

    fn block_with_retries(&mut self, j: usize, failures: &mut u32) -> Result<BlockOutcome> {
        loop {
            let r = match self.config.kernel {
                KernelKind::Mh => self.mh_block(j),
                KernelKind::Da | KernelKind::Ada => self.da_block(j),
            };
            match r {
                Err(Error::Forward(e)) => {
                    *failures += 1;
                    log::warn!("forward failure {} in iteration {}: {e}", failures, self.iteration + 1);
                    if *failures > self.config.max_retries {
                        return Err(Error::Abort {
                            attempts: *failures,
                            last: e,
                        });
                    }
                }
                other => return other,
            }
        }
    }

    /// One iteration of the configured kernel followed by adaptation.
    ///
    /// On error the chain is rolled back to the start of the iteration, so
    /// a checkpoint taken afterwards is consistent.
    pub fn step(&mut self) -> Result<Step> {
        let saved = (self.state.clone(), self.proposal.clone(), self.rng.clone(), self.counters);
        match self.step_inner() {
            Ok(s) => Ok(s),
            Err(e) => {
                let failures = self.counters.forward_failures;
                (self.state, self.proposal, self.rng, self.counters) = saved;
                self.counters.forward_failures = failures;
                Err(e)
            }
        }
    }

    fn step_inner(&mut self) -> Result<Step> {
        let blocks = self.proposal.blocks();
        let mut acc1 = 0u32;
        let mut acc2 = 0u32;
        let mut failures = 0u32;
        for j in 0..blocks {
            let o = self.block_with_retries(j, &mut failures)?;
            acc1 += u32::from(o.acc1);
            acc2 += u32::from(o.acc2);
            if self.config.adapt_proposal {
                self.proposal.record_block(j, o.acc1);
            }
        }
        let n = self.iteration + 1;
        let mut aem_change = 0.0;
        if self.config.adapt_aem {
            if let (Some(f), Some(c)) = (&self.state.fine, &self.state.coarse) {
                aem_change = self.approx.observe(f, c)?;
            }
        }
        let mut proposal_change = 0.0;
        if self.config.adapt_proposal {
            self.proposal.update_running_cov(&self.state.x)?;
            self.proposal.end_iteration(n);
            proposal_change = self.proposal.last_cov_change();
        }
        self.iteration = n;
        self.counters.attempts += blocks as u64;
        self.counters.acc1 += u64::from(acc1);
        let is_mh = self.config.kernel == KernelKind::Mh;
        if !is_mh {
            self.counters.acc2 += u64::from(acc2);
        }
        Ok(Step {
            record: ChainRecord {
                iteration: n,
                x: self.state.x.clone(),
                log_post: self.state.log_post(),
                log_like: self.state.log_like,
                acc1,
                acc2: (!is_mh).then_some(acc2),
                attempts: blocks as u32,
                n_fine: self.counters.fine,
                n_coarse: self.counters.coarse,
                sigma: self.proposal.sigmas().to_vec(),
            },
            aem_change,
            aem_count: self.approx.aem().map_or(0, |a| a.count()),
            proposal_change,
            proposal_count: self.proposal.count(),
        })
    }

    /// Runs `iterations` steps, handing each to `sink`.
    pub fn run<F>(&mut self, iterations: u64, mut sink: F) -> Result<()>
    where
        F: FnMut(&Step) -> Result<()>,
    {
        for _ in 0..iterations {
            let s = self.step()?;
            sink(&s)?;
        }
        Ok(())
    }
}

/// Statistics of `n·‖ΔΣ_n‖_F` along a run, for checking diminishing
/// adaptation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdaptationTrace {
    /// `n·‖ΔΣ_n‖_F` of the error model, one entry per iteration.
    pub aem: Vec<f64>,
    /// `n·‖ΔΣ_n‖_F` of the proposal covariance.
    pub proposal: Vec<f64>,
}

impl AdaptationTrace {
    pub fn push(&mut self, s: &Step) {
        self.aem.push(s.aem_count as f64 * s.aem_change);
        self.proposal.push(s.proposal_count as f64 * s.proposal_change);
    }
}

/// Running maximum of `series` at its midpoint and at its end. Bounded
/// adaptation shows no growth between the two.
pub fn running_max_growth(series: &[f64]) -> (f64, f64) {
    let half = series.len() / 2;
    let fold = |s: &[f64]| s.iter().cloned().fold(0.0, f64::max);
    (fold(&series[..half]), fold(series))
}

/// Output of [`run_chain`].
#[derive(Debug, Clone, PartialEq)]
pub struct ChainRun {
    pub records: Vec<ChainRecord>,
    pub adaptation: AdaptationTrace,
}

/// Runs a chain in memory, collecting every record.
pub fn run_chain(sampler: &mut Sampler, iterations: u64) -> Result<ChainRun> {
    let mut records = Vec::with_capacity(iterations as usize);
    let mut adaptation = AdaptationTrace::default();
    sampler.run(iterations, |s| {
        adaptation.push(s);
        records.push(s.record.clone());
        Ok(())
    })?;
    Ok(ChainRun { records, adaptation })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aem::AemState;
    use crate::linalg::Matrix;
    use crate::models::analytic::AnalyticSpec;
    use crate::models::LinearModel;
    use crate::proposal::{AdaptConfig, GroupPartition};
    use crate::rng::chain_stream;
    use crate::target::{Bounds, ForwardModel, ForwardPair, NoiseModel, Prior};
    use alloc::vec;

    fn analytic(eps: f64) -> Arc<Posterior> {
        let spec = AnalyticSpec {
            epsilon: eps,
            ..AnalyticSpec::default()
        };
        let data = spec.fine().evaluate(&spec.x_true).unwrap();
        Arc::new(spec.posterior(data).unwrap())
    }

    fn sampler(post: &Arc<Posterior>, kernel: KernelKind, scheme: Scheme, seed: u64) -> Sampler {
        let approx = match scheme {
            Scheme::Approx2 => Approximation::new(
                scheme,
                Some(AemState::new(post.noise().covariance(), crate::aem::MeanMode::Free).unwrap()),
            )
            .unwrap(),
            s => Approximation::fresh(s, post.noise().covariance()).unwrap(),
        };
        let prop = ProposalAdaptState::random_walk(&Matrix::identity(2), 0.15).unwrap();
        Sampler::new(
            post.clone(),
            SamplerConfig::for_kernel(kernel),
            prop,
            approx,
            vec![1.0, 0.5],
            chain_stream(seed, 0),
        )
        .unwrap()
    }

    #[test]
    fn invalid_combinations_are_rejected() {
        assert!(validate_combination(KernelKind::Da, Scheme::Exact).is_err());
        assert!(validate_combination(KernelKind::Mh, Scheme::Approx5).is_err());
        assert!(validate_combination(KernelKind::Da, Scheme::Approx3).is_err());
        assert!(validate_combination(KernelKind::Ada, Scheme::Approx5).is_ok());
        assert!(validate_combination(KernelKind::Mh, Scheme::Exact).is_ok());
    }

    #[test]
    fn zero_length_chain_has_no_records() {
        let post = analytic(0.1);
        let mut s = sampler(&post, KernelKind::Mh, Scheme::Exact, 1);
        assert!(run_chain(&mut s, 0).unwrap().records.is_empty());
        assert_eq!(s.counters().fine, 1);
    }

    #[test]
    fn fine_evaluations_equal_stage_one_accepts_plus_one() {
        let post = analytic(0.1);
        for kernel in [KernelKind::Da, KernelKind::Ada] {
            for scheme in [Scheme::Approx1, Scheme::Approx2, Scheme::Approx4] {
                let mut s = sampler(&post, kernel, scheme, 2);
                run_chain(&mut s, 2000).unwrap();
                let c = s.counters();
                assert_eq!(c.fine, c.acc1 + 1, "{kernel:?} {scheme}");
            }
        }
        for scheme in [Scheme::Approx3, Scheme::Approx5] {
            let mut s = sampler(&post, KernelKind::Ada, scheme, 3);
            run_chain(&mut s, 2000).unwrap();
            let c = s.counters();
            assert_eq!(c.fine, c.acc1 + 1, "{scheme}");
        }
    }

    #[test]
    fn exact_surrogate_makes_stage_two_always_accept() {
        let post = analytic(0.0);
        let mut s = sampler(&post, KernelKind::Da, Scheme::Approx1, 4);
        let run = run_chain(&mut s, 3000).unwrap();
        for r in &run.records {
            assert_eq!(r.acc2, Some(r.acc1));
        }
    }

    #[test]
    fn same_seed_gives_identical_records() {
        let post = analytic(0.1);
        let a = run_chain(&mut sampler(&post, KernelKind::Ada, Scheme::Approx5, 9), 500).unwrap();
        let b = run_chain(&mut sampler(&post, KernelKind::Ada, Scheme::Approx5, 9), 500).unwrap();
        assert_eq!(a.records, b.records);
    }

    #[test]
    fn checkpoint_resume_is_bit_identical() {
        let post = analytic(0.1);
        let full = run_chain(&mut sampler(&post, KernelKind::Ada, Scheme::Approx3, 5), 600).unwrap();
        let mut first = sampler(&post, KernelKind::Ada, Scheme::Approx3, 5);
        let mut head = run_chain(&mut first, 250).unwrap().records;
        let mut resumed = Sampler::from_checkpoint(post.clone(), first.checkpoint()).unwrap();
        head.extend(run_chain(&mut resumed, 350).unwrap().records);
        assert_eq!(full.records, head);
    }

    #[test]
    fn disabling_adaptation_reduces_ada_to_da() {
        let post = analytic(0.1);
        let mut da = sampler(&post, KernelKind::Da, Scheme::Approx1, 6);
        let mut ada = sampler(&post, KernelKind::Ada, Scheme::Approx1, 6);
        ada.config.adapt_proposal = false;
        ada.config.adapt_aem = false;
        let a = run_chain(&mut da, 400).unwrap().records;
        let b = run_chain(&mut ada, 400).unwrap().records;
        assert_eq!(a, b);
    }

    /// Succeeds only at the starting point.
    struct Brittle;
    impl ForwardModel for Brittle {
        fn input_dim(&self) -> usize {
            1
        }
        fn output_dim(&self) -> usize {
            1
        }
        fn evaluate(&self, x: &[f64]) -> core::result::Result<Vec<f64>, crate::ForwardError> {
            if x[0] == -2.0 {
                Ok(vec![x[0]])
            } else {
                Err(crate::ForwardError::new(x, "solver diverged"))
            }
        }
    }

    #[test]
    fn persistent_forward_failure_aborts_and_rolls_back() {
        let post = Arc::new(
            Posterior::new(
                ForwardPair::exact(Arc::new(Brittle)),
                NoiseModel::diagonal(&[1.0]).unwrap(),
                Prior::Box(Bounds::uniform(1, -10.0, 10.0).unwrap()),
                vec![0.0],
            )
            .unwrap(),
        );
        let prop = ProposalAdaptState::random_walk(&Matrix::identity(1), 0.1).unwrap();
        let mut s = Sampler::new(
            post,
            SamplerConfig::for_kernel(KernelKind::Mh),
            prop,
            Approximation::fresh(Scheme::Exact, &Matrix::identity(1)).unwrap(),
            vec![-2.0],
            chain_stream(1, 0),
        )
        .unwrap();
        let before = s.checkpoint();
        match s.step() {
            Err(Error::Abort { attempts, .. }) => assert_eq!(attempts, DEFAULT_MAX_RETRIES + 1),
            other => panic!("expected abort, got {other:?}"),
        }
        assert_eq!(s.state(), &before.state);
        assert_eq!(s.iteration(), 0);
        assert_eq!(s.counters().forward_failures, u64::from(DEFAULT_MAX_RETRIES + 1));
        assert_eq!(s.counters().fine, 1);
    }

    #[test]
    fn gcam_blocks_count_as_separate_attempts() {
        let post = analytic(0.1);
        let prop = ProposalAdaptState::gcam(GroupPartition::contiguous(&[1, 1]).unwrap(), AdaptConfig::default()).unwrap();
        let mut s = Sampler::new(
            post.clone(),
            SamplerConfig::for_kernel(KernelKind::Ada),
            prop,
            Approximation::fresh(Scheme::Approx5, post.noise().covariance()).unwrap(),
            vec![1.0, 0.5],
            chain_stream(8, 0),
        )
        .unwrap();
        let run = run_chain(&mut s, 500).unwrap();
        assert!(run.records.iter().all(|r| r.attempts == 2 && r.sigma.len() == 2));
        assert_eq!(s.counters().fine, s.counters().acc1 + 1);
    }

    #[test]
    fn out_of_support_start_is_rejected() {
        let post = Arc::new(
            Posterior::new(
                ForwardPair::exact(Arc::new(LinearModel::new(Matrix::identity(1)))),
                NoiseModel::diagonal(&[1.0]).unwrap(),
                Prior::Box(Bounds::uniform(1, 0.0, 1.0).unwrap()),
                vec![0.5],
            )
            .unwrap(),
        );
        let prop = ProposalAdaptState::random_walk(&Matrix::identity(1), 0.1).unwrap();
        let r = Sampler::new(
            post,
            SamplerConfig::for_kernel(KernelKind::Mh),
            prop,
            Approximation::fresh(Scheme::Exact, &Matrix::identity(1)).unwrap(),
            vec![2.0],
            chain_stream(1, 0),
        );
        assert!(r.is_err());
    }
}
