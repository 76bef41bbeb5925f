//! Random-walk, adaptive Metropolis and grouped-components adaptive
//! Metropolis (GCAM) proposals.
//!
//! All proposals here are Gaussian random walks, so for a fixed adaptation
//! state `q(x, y) = q(y, x)` and acceptance ratios can drop the q-ratio.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::linalg::{Cholesky, Matrix};

/// Optimal-scaling constant for Gaussian random walks.
pub const OPTIMAL_SCALE: f64 = 2.38;
/// Standard deviation scale of the non-adaptive early phase.
pub const EARLY_SCALE: f64 = 0.1;

/// Partition of the coordinates `0..d` into nonempty disjoint groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupPartition {
    dim: usize,
    groups: Vec<Vec<usize>>,
}

impl GroupPartition {
    pub fn new(dim: usize, groups: Vec<Vec<usize>>) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("partition dimension must be positive"));
        }
        let mut seen = vec![false; dim];
        for g in &groups {
            if g.is_empty() {
                return Err(invalid("partition groups must be nonempty"));
            }
            for &i in g {
                if i >= dim {
                    return Err(invalid(alloc::format!("partition index {i} out of range 0..{dim}")));
                }
                if seen[i] {
                    return Err(invalid(alloc::format!("partition index {i} appears twice")));
                }
                seen[i] = true;
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(invalid(alloc::format!("partition does not cover index {i}")));
        }
        Ok(Self { dim, groups })
    }

    /// One group holding every coordinate.
    pub fn single(dim: usize) -> Self {
        Self::new(dim, vec![(0..dim).collect()]).expect("single group is a partition")
    }

    /// Consecutive groups of the given sizes.
    pub fn contiguous(sizes: &[usize]) -> Result<Self> {
        let mut groups = Vec::with_capacity(sizes.len());
        let mut start = 0;
        for &s in sizes {
            groups.push((start..start + s).collect());
            start += s;
        }
        Self::new(start, groups)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn group(&self, j: usize) -> &[usize] {
        &self.groups[j]
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProposalKind {
    /// Fixed covariance and scale.
    RandomWalk,
    /// Adaptive Metropolis on the full parameter vector.
    Am,
    /// Blockwise adaptive Metropolis with per-group scales.
    Gcam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptConfig {
    /// Weight of the fixed identity component (AM) or diagonal regularizer (GCAM).
    pub beta_mix: f64,
    /// Batch length N for scale adaptation.
    pub batch: u64,
    /// Acceptance rate the GCAM scales are tuned towards.
    pub target_rate: f64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            beta_mix: 0.05,
            batch: 50,
            target_rate: 0.234,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_mix > 0.0 && self.beta_mix < 1.0) {
            return Err(invalid("beta_mix must lie in (0, 1)"));
        }
        if self.batch == 0 {
            return Err(invalid("adaptation batch must be positive"));
        }
        if !(self.target_rate > 0.0 && self.target_rate < 1.0) {
            return Err(invalid("target acceptance rate must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Draw `x + scale · L z` with `L` the factor of the proposal covariance.
pub fn propose_with_factor<R: Rng + ?Sized>(
    x: &[f64],
    factor: &Cholesky,
    scale: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_dim("proposal", factor.dim(), x.len())?;
    let z: Vec<f64> = (0..x.len()).map(|_| rng.sample(StandardNormal)).collect();
    let step = factor.mul_lower(&z)?;
    Ok(x.iter().zip(&step).map(|(a, s)| a + scale * s).collect())
}

/// `y ~ N(x, scale² Σ)`.
pub fn propose_rw<R: Rng + ?Sized>(
    x: &[f64],
    covariance: &Matrix,
    scale: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(scale > 0.0) {
        return Err(invalid("proposal scale must be positive"));
    }
    propose_with_factor(x, &Cholesky::new(covariance)?, scale, rng)
}

fn isotropic_step<R: Rng + ?Sized>(x: &[f64], sd: f64, rng: &mut R) -> Vec<f64> {
    x.iter()
        .map(|v| v + sd * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Adaptation state of one chain's proposal: running moments of the chain
/// history, per-group scales and batch acceptance counters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalAdaptState {
    kind: ProposalKind,
    partition: GroupPartition,
    config: AdaptConfig,
    rw_factor: Cholesky,
    count: u64,
    mean: Vec<f64>,
    cov: Matrix,
    sigma: Vec<f64>,
    batch_accepted: Vec<u64>,
    batch_attempted: Vec<u64>,
    last_cov_change: f64,
    off_batch_calls: u64,
}

impl ProposalAdaptState {
    /// Fixed `N(x, scale² Σ)` proposal.
    pub fn random_walk(covariance: &Matrix, scale: f64) -> Result<Self> {
        if !(scale > 0.0) {
            return Err(invalid("proposal scale must be positive"));
        }
        let d = covariance.rows();
        let mut s = Self::build(ProposalKind::RandomWalk, GroupPartition::single(d), AdaptConfig::default())?;
        s.rw_factor = Cholesky::new(covariance)?;
        s.sigma = vec![scale];
        Ok(s)
    }

    pub fn am(dim: usize, config: AdaptConfig) -> Result<Self> {
        Self::build(ProposalKind::Am, GroupPartition::single(dim), config)
    }

    pub fn gcam(partition: GroupPartition, config: AdaptConfig) -> Result<Self> {
        Self::build(ProposalKind::Gcam, partition, config)
    }

    fn build(kind: ProposalKind, partition: GroupPartition, config: AdaptConfig) -> Result<Self> {
        config.validate()?;
        let d = partition.dim();
        let l = partition.len();
        let sigma = partition
            .groups()
            .iter()
            .map(|g| OPTIMAL_SCALE / (g.len() as f64).sqrt())
            .collect();
        Ok(Self {
            kind,
            config,
            rw_factor: Cholesky::new(&Matrix::identity(d))?,
            count: 0,
            mean: vec![0.0; d],
            cov: Matrix::zeros(d, d),
            sigma,
            batch_accepted: vec![0; l],
            batch_attempted: vec![0; l],
            last_cov_change: 0.0,
            off_batch_calls: 0,
            partition,
        })
    }

    pub fn kind(&self) -> ProposalKind {
        self.kind
    }

    pub fn partition(&self) -> &GroupPartition {
        &self.partition
    }

    pub fn config(&self) -> &AdaptConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.partition.dim()
    }

    /// Number of samples folded into the running moments.
    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Running sample covariance (denominator n − 1).
    pub fn covariance(&self) -> &Matrix {
        &self.cov
    }

    /// Per-group scales; a single entry for RW and AM.
    pub fn sigmas(&self) -> &[f64] {
        &self.sigma
    }

    pub fn set_sigmas(&mut self, sigma: Vec<f64>) -> Result<()> {
        check_dim("scales", self.sigma.len(), sigma.len())?;
        if sigma.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(invalid("scales must be positive and finite"));
        }
        self.sigma = sigma;
        Ok(())
    }

    /// Frobenius norm of the last running-covariance change.
    pub fn last_cov_change(&self) -> f64 {
        self.last_cov_change
    }

    /// Scale adaptation requests that fell off a batch boundary.
    pub fn off_batch_calls(&self) -> u64 {
        self.off_batch_calls
    }

    /// Number of sequential blocks a proposal is made of.
    pub fn blocks(&self) -> usize {
        match self.kind {
            ProposalKind::Gcam => self.partition.len(),
            _ => 1,
        }
    }

    /// Coordinates moved by block `j`.
    pub fn block(&self, j: usize) -> &[usize] {
        self.partition.group(j)
    }

    /// Proposal for block `j` from `x`; coordinates outside the block are
    /// copied unchanged.
    pub fn propose_block<R: Rng + ?Sized>(&self, x: &[f64], j: usize, rng: &mut R) -> Result<Vec<f64>> {
        check_dim("state", self.dim(), x.len())?;
        match self.kind {
            ProposalKind::RandomWalk => propose_with_factor(x, &self.rw_factor, self.sigma[0], rng),
            ProposalKind::Am => self.am_propose(x, rng),
            ProposalKind::Gcam => self.gcam_propose_block(x, j, rng),
        }
    }

    /// Proposal covariance the AM kernel would use right now.
    pub fn am_covariance(&self) -> Matrix {
        let d = self.dim() as f64;
        let early = EARLY_SCALE * EARLY_SCALE / d;
        if self.count <= 2 * self.dim() as u64 {
            return Matrix::identity(self.dim()).scaled(early);
        }
        let beta = self.config.beta_mix;
        let mut c = self.cov.scaled((1.0 - beta) * OPTIMAL_SCALE * OPTIMAL_SCALE / d);
        c.add_to_diagonal(beta * early);
        c
    }

    pub fn am_propose<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        check_dim("state", self.dim(), x.len())?;
        if self.count <= 2 * self.dim() as u64 {
            let sd = EARLY_SCALE / (self.dim() as f64).sqrt();
            return Ok(isotropic_step(x, sd, rng));
        }
        propose_with_factor(x, &Cholesky::new(&self.am_covariance())?, 1.0, rng)
    }

    /// Covariance of the late-phase GCAM block proposal; `None` while the
    /// block is in its fixed early phase.
    pub fn gcam_block_covariance(&self, j: usize) -> Result<Option<Matrix>> {
        let idx = self.partition.group(j);
        if self.count <= 2 * idx.len() as u64 {
            return Ok(None);
        }
        let c = self.cov.submatrix(idx);
        let max_diag = c.diagonal().into_iter().fold(0.0, f64::max);
        if !max_diag.is_finite() {
            return Err(invalid(alloc::format!("group {j} has a non-finite empirical covariance")));
        }
        if max_diag == 0.0 {
            // the block has never moved; keep using the early proposal
            log::warn!("group {j} has zero empirical variance after {} samples", self.count);
            return Ok(None);
        }
        // β is added to the normalized covariance so the regularizer does
        // not depend on the units of the parameters
        let mut c = c.scaled(1.0 / max_diag);
        c.add_to_diagonal(self.config.beta_mix);
        Ok(Some(c.scaled(self.sigma[j] * self.sigma[j])))
    }

    fn gcam_propose_block<R: Rng + ?Sized>(&self, x: &[f64], j: usize, rng: &mut R) -> Result<Vec<f64>> {
        let idx = self.partition.group(j);
        let xj: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
        let zj = match self.gcam_block_covariance(j)? {
            None => isotropic_step(&xj, EARLY_SCALE / (idx.len() as f64).sqrt(), rng),
            Some(c) => propose_with_factor(&xj, &Cholesky::new(&c)?, 1.0, rng)?,
        };
        let mut y = x.to_vec();
        for (&i, z) in idx.iter().zip(zj) {
            y[i] = z;
        }
        Ok(y)
    }

    /// Count one attempted block move towards the current batch.
    pub fn record_block(&mut self, j: usize, accepted: bool) {
        self.batch_attempted[j] += 1;
        if accepted {
            self.batch_accepted[j] += 1;
        }
    }

    /// Acceptance rates of the current, incomplete batch.
    pub fn batch_rates(&self) -> Vec<f64> {
        self.batch_accepted
            .iter()
            .zip(&self.batch_attempted)
            .map(|(&a, &n)| if n == 0 { f64::NAN } else { a as f64 / n as f64 })
            .collect()
    }

    /// Fold one chain state into the running mean and covariance.
    pub fn update_running_cov(&mut self, x: &[f64]) -> Result<()> {
        check_dim("state", self.dim(), x.len())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("proposal adaptation sample"));
        }
        self.count += 1;
        let n = self.count as f64;
        let delta: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        for (m, d) in self.mean.iter_mut().zip(&delta) {
            *m += d / n;
        }
        if self.count == 1 {
            self.last_cov_change = 0.0;
            return Ok(());
        }
        // C_n = (n−2)/(n−1) C_{n−1} + δδᵀ/n, upper triangle mirrored so
        // the result is exactly symmetric.
        let d = self.dim();
        let shrink = (n - 2.0) / (n - 1.0);
        let mut change = 0.0;
        for i in 0..d {
            for k in i..d {
                let old = self.cov[(i, k)];
                let new = shrink * old + delta[i] * delta[k] / n;
                let diff = new - old;
                change += if i == k { diff * diff } else { 2.0 * diff * diff };
                self.cov[(i, k)] = new;
                self.cov[(k, i)] = new;
            }
        }
        self.last_cov_change = change.sqrt();
        Ok(())
    }

    /// `δ = min{0.01, √(N/n)}`.
    pub fn adaptation_step(batch: u64, n: u64) -> f64 {
        f64::min(0.01, (batch as f64 / n as f64).sqrt())
    }

    /// Batch-boundary scale update. Returns `false` (and counts a warning)
    /// when `n` is not a multiple of the batch length.
    pub fn gcam_adapt_scales(&mut self, n: u64) -> bool {
        if n == 0 || !n.is_multiple_of(self.config.batch) {
            self.off_batch_calls += 1;
            log::warn!("scale adaptation requested off a batch boundary at n = {n}");
            return false;
        }
        let delta = Self::adaptation_step(self.config.batch, n);
        for j in 0..self.sigma.len() {
            let attempted = self.batch_attempted[j];
            if attempted > 0 {
                let rate = self.batch_accepted[j] as f64 / attempted as f64;
                let factor = if rate > self.config.target_rate { delta } else { -delta };
                self.sigma[j] *= factor.exp();
            }
            self.batch_accepted[j] = 0;
            self.batch_attempted[j] = 0;
        }
        true
    }

    /// End-of-iteration hook: adapts GCAM scales on batch boundaries.
    pub fn end_iteration(&mut self, n: u64) {
        if self.kind == ProposalKind::Gcam && n > 0 && n.is_multiple_of(self.config.batch) {
            self.gcam_adapt_scales(n);
        }
    }
}

/// One GCAM sweep with blockwise Metropolis accepts against `log_target`.
///
/// `log_x` is the target log-density at `x`. Returns the composite state,
/// its log-density and the per-block accept flags; batch counters are
/// updated.
pub fn gcam_sweep<R, F>(
    state: &mut ProposalAdaptState,
    x: &[f64],
    log_x: f64,
    mut log_target: F,
    rng: &mut R,
) -> Result<(Vec<f64>, f64, Vec<bool>)>
where
    R: Rng + ?Sized,
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut y = x.to_vec();
    let mut log_y = log_x;
    let mut flags = Vec::with_capacity(state.blocks());
    for j in 0..state.blocks() {
        let z = state.propose_block(&y, j, rng)?;
        let log_z = log_target(&z)?;
        let u: f64 = rng.random();
        let accept = log_z > f64::NEG_INFINITY && u < f64::min(0.0, log_z - log_y).exp();
        if accept {
            y = z;
            log_y = log_z;
        }
        state.record_block(j, accept);
        flags.push(accept);
    }
    Ok((y, log_y, flags))
}
