//! Builds posteriors, starting points, proposals and approximations from a
//! run configuration.

use std::sync::Arc;

use ada_core::aem::{build_prior_aem, Approximation, Scheme};
use ada_core::kernel::{KernelKind, Sampler, SamplerConfig};
use ada_core::linalg::Matrix;
use ada_core::models::analytic::AnalyticSpec;
use ada_core::models::{generate_synthetic_data, FvModel, FvSpec, Resolution};
use ada_core::proposal::{GroupPartition, ProposalAdaptState, OPTIMAL_SCALE};
use ada_core::rng::{chain_stream, stream, STREAM_INITIAL_STATE, STREAM_PRIOR_AEM};
use ada_core::target::{ForwardModel, ForwardPair, Posterior};

use crate::config::{LoadedConfig, ProblemKind, ProposalKindName, Resolved};
use crate::error::{CliError, CliResult};
use crate::timing::{TimedModel, Timer};

/// A continuous inference problem with timers on both forward models.
pub struct Problem {
    pub posterior: Arc<Posterior>,
    pub fine_timer: Arc<Timer>,
    pub coarse_timer: Arc<Timer>,
}

pub fn analytic_spec(cfg: &LoadedConfig) -> CliResult<AnalyticSpec> {
    let o = &cfg.config.problem.analytic;
    let mut s = AnalyticSpec::default();
    if let Some(e) = o.epsilon {
        s.epsilon = e;
    }
    if let Some(rows) = &o.a {
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        s.a = Matrix::from_rows(&refs).map_err(|e| CliError::Config(format!("{}: problem.analytic.a: {e}", cfg.origin)))?;
    }
    if let Some(m) = o.prior_mean {
        s.prior_mean = m;
    }
    if let Some(v) = o.prior_variance {
        s.prior_variance = v;
    }
    if let Some(v) = o.noise_sigma {
        s.noise_sigma = v;
    }
    if let Some(v) = o.x_true {
        s.x_true = v;
    }
    s.validate()
        .map_err(|e| CliError::Config(format!("{}: [problem.analytic]: {e}", cfg.origin)))?;
    Ok(s)
}

pub fn fv_spec(cfg: &LoadedConfig) -> CliResult<FvSpec> {
    let o = &cfg.config.problem.fv;
    let mut s = FvSpec::default();
    macro_rules! set {
        ($($f:ident),*) => {$(if let Some(v) = &o.$f { s.$f = v.clone(); })*};
    }
    set!(length, zones, fine_cells, coarse_cells, horizon, fine_steps, coarse_steps, influx, sensors, times, lower, upper, x_true, noise_fraction);
    if let Some(p) = o.prior_std {
        s.prior_std = (p > 0.0).then_some(p);
    }
    s.validate()
        .map_err(|e| CliError::Config(format!("{}: [problem.fv]: {e}", cfg.origin)))?;
    Ok(s)
}

fn timed_pair(fine: Arc<dyn ForwardModel>, coarse: Arc<dyn ForwardModel>) -> CliResult<(ForwardPair, Arc<Timer>, Arc<Timer>)> {
    let ft = Arc::new(Timer::default());
    let ct = Arc::new(Timer::default());
    let pair = ForwardPair::new(
        Arc::new(TimedModel::new(fine, ft.clone())),
        Arc::new(TimedModel::new(coarse, ct.clone())),
    )?;
    Ok((pair, ft, ct))
}

/// Builds the posterior; data come from the fine model at the true parameter
/// with noise from `data_seed`.
pub fn build_problem(cfg: &LoadedConfig, kind: ProblemKind) -> CliResult<Problem> {
    let data_seed = cfg.config.problem.data_seed;
    let (pair, noise, prior, data, ft, ct);
    match kind {
        ProblemKind::Analytic => {
            let s = analytic_spec(cfg)?;
            let fine: Arc<dyn ForwardModel> = Arc::new(s.fine());
            let syn = generate_synthetic_data(fine.as_ref(), &s.x_true, s.noise_sigma, data_seed)?;
            (pair, ft, ct) = timed_pair(fine, Arc::new(s.coarse()))?;
            noise = s.noise();
            prior = s.prior();
            data = syn.data;
        }
        ProblemKind::FvDiffusion => {
            let s = fv_spec(cfg)?;
            let fine: Arc<dyn ForwardModel> = Arc::new(FvModel::new(s.clone(), Resolution::Fine)?);
            let coarse: Arc<dyn ForwardModel> = Arc::new(FvModel::new(s.clone(), Resolution::Coarse)?);
            let sigma = s.noise_sigma()?;
            let syn = generate_synthetic_data(fine.as_ref(), &s.x_true, sigma, data_seed)?;
            (pair, ft, ct) = timed_pair(fine, coarse)?;
            noise = ada_core::target::NoiseModel::isotropic(s.output_dim(), sigma)?;
            prior = s.prior()?;
            data = syn.data;
        }
        ProblemKind::DiscreteToy => {
            return Err(CliError::Config("the discrete toy has no forward model".into()));
        }
    }
    Ok(Problem {
        posterior: Arc::new(Posterior::new(pair, noise, prior, data)?),
        fine_timer: ft,
        coarse_timer: ct,
    })
}

/// Chain `k` starts at the configured `x0`, or at the `(k+1)`-th prior draw
/// of the initial-state stream.
pub fn initial_state(cfg: &LoadedConfig, post: &Posterior, seed: u64, chain: u32) -> CliResult<Vec<f64>> {
    if let Some(x0) = &cfg.config.problem.x0 {
        let x = x0.get_ref().clone();
        if x.len() != post.param_dim() {
            return Err(cfg.error_at(
                x0.span(),
                format!("x0 has {} entries, the problem has {} parameters", x.len(), post.param_dim()),
            ));
        }
        if !post.log_prior(&x).is_finite() {
            return Err(cfg.error_at(x0.span(), "x0 lies outside the prior support"));
        }
        return Ok(x);
    }
    let mut rng = stream(seed, STREAM_INITIAL_STATE);
    let mut x = post.prior().sample(&mut rng)?;
    for _ in 0..chain {
        x = post.prior().sample(&mut rng)?;
    }
    Ok(x)
}

pub fn build_proposal(cfg: &LoadedConfig, r: &Resolved, dim: usize) -> CliResult<ProposalAdaptState> {
    let p = &cfg.config.proposal;
    let st = match r.proposal {
        ProposalKindName::RandomWalk => {
            let scale = p.scale.as_ref().map_or(OPTIMAL_SCALE / (dim as f64).sqrt(), |s| *s.get_ref());
            ProposalAdaptState::random_walk(&Matrix::identity(dim), scale)?
        }
        ProposalKindName::Am => ProposalAdaptState::am(dim, r.adapt.clone())?,
        ProposalKindName::Gcam => {
            let partition = match &p.groups {
                None => GroupPartition::single(dim),
                Some(g) => {
                    let total: usize = g.get_ref().iter().sum();
                    if total != dim {
                        return Err(cfg.error_at(
                            g.span(),
                            format!("group sizes sum to {total}, the problem has {dim} parameters"),
                        ));
                    }
                    GroupPartition::contiguous(g.get_ref())?
                }
            };
            ProposalAdaptState::gcam(partition, r.adapt.clone())?
        }
    };
    Ok(st)
}

/// The approximation for `scheme`; APPROX2's prior AEM is drawn from the
/// dedicated prior-AEM stream so every chain shares it.
pub fn build_approximation(cfg: &LoadedConfig, r: &Resolved, post: &Posterior, scheme: Scheme, seed: u64) -> CliResult<Approximation> {
    let s = &cfg.config.sampler;
    let approx = if scheme == Scheme::Approx2 {
        let mut rng = stream(seed, STREAM_PRIOR_AEM);
        let aem = build_prior_aem(post, *s.prior_aem_samples.get_ref(), &mut rng)?;
        Approximation::new(scheme, Some(aem))?
    } else {
        Approximation::fresh(scheme, post.noise().covariance())?
    };
    Ok(approx.with_error_input(r.error_input).with_freeze_after(s.freeze_aem_after))
}

pub fn sampler_config(cfg: &LoadedConfig, kernel: KernelKind) -> SamplerConfig {
    let s = &cfg.config.sampler;
    let mut c = SamplerConfig::for_kernel(kernel);
    if let Some(a) = s.adapt_proposal {
        c.adapt_proposal = a;
    }
    if let Some(a) = s.adapt_aem {
        c.adapt_aem = a;
    }
    c.max_retries = s.max_retries;
    c.warm_start = s.warm_start;
    c
}

/// A fresh sampler for chain `chain`.
pub fn build_sampler(
    cfg: &LoadedConfig,
    r: &Resolved,
    post: &Arc<Posterior>,
    kernel: KernelKind,
    scheme: Scheme,
    seed: u64,
    chain: u32,
) -> CliResult<Sampler> {
    let proposal = build_proposal(cfg, r, post.param_dim())?;
    let approx = build_approximation(cfg, r, post, scheme, seed)?;
    let x0 = initial_state(cfg, post, seed, chain)?;
    Ok(Sampler::new(
        post.clone(),
        sampler_config(cfg, kernel),
        proposal,
        approx,
        x0,
        chain_stream(seed, chain),
    )?)
}
