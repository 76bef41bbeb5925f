//! The `run` command: chains, trace files, checkpoints and summaries.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use ada_core::aem::Scheme;
use ada_core::diagnostics::{acceptance_summary, EfficiencySummary};
use ada_core::kernel::{Checkpoint, ChainRecord, KernelKind, Sampler};
use ada_core::models::{discrete_toy, DiscreteToy};
use ada_core::rng::chain_stream;
use ada_core::target::Posterior;
use serde::{Deserialize, Serialize};

use crate::config::{LoadedConfig, ProblemKind, Resolved};
use crate::error::{CliError, CliResult};
use crate::problem::{build_problem, build_sampler, Problem};
use crate::timing::{cost_ratio, CostRatio};
use crate::toy::ToyChain;
use crate::trace::{format_float, header_block, read_trace, Meta, TraceWriter, VERSION};

/// Command-line overrides applied before the config is hashed.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub chains: Option<u32>,
    pub out: Option<PathBuf>,
}

/// A validated configuration ready to run.
#[derive(Debug, Clone)]
pub struct Context {
    pub cfg: LoadedConfig,
    pub resolved: Resolved,
    pub hash: String,
}

impl Context {
    pub fn new(mut cfg: LoadedConfig, ov: &Overrides) -> CliResult<Self> {
        if let Some(s) = ov.seed {
            cfg.config.seed = s;
        }
        if let Some(c) = ov.chains {
            cfg.config.chains = toml::Spanned::new(0..0, c);
        }
        if let Some(o) = &ov.out {
            cfg.config.out = Some(o.clone());
        }
        let resolved = cfg.resolve()?;
        let hash = cfg.hash();
        Ok(Self { cfg, resolved, hash })
    }

    pub fn seed(&self) -> u64 {
        self.cfg.config.seed
    }

    pub fn chains(&self) -> u32 {
        *self.cfg.config.chains.get_ref()
    }

    pub fn iterations(&self) -> u64 {
        *self.cfg.config.iterations.get_ref()
    }

    pub fn out_dir(&self) -> CliResult<PathBuf> {
        self.cfg
            .config
            .out
            .clone()
            .ok_or_else(|| CliError::Config(format!("{}: no output directory (set `out` or pass --out)", self.cfg.origin)))
    }
}

/// Which kernel/scheme pair to run and where.
#[derive(Debug, Clone)]
pub struct Variant {
    pub kernel: KernelKind,
    pub scheme: Scheme,
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ChainState {
    Sampler(Box<Checkpoint>),
    Toy(Box<ToyChain>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointFile {
    pub version: String,
    pub config_hash: String,
    pub chain: u32,
    pub state: ChainState,
}

enum Chain {
    Sampler(Box<Sampler>),
    Toy(Box<ToyChain>, DiscreteToy),
}

impl Chain {
    fn iteration(&self) -> u64 {
        match self {
            Chain::Sampler(s) => s.iteration(),
            Chain::Toy(t, _) => t.iteration,
        }
    }

    fn step(&mut self) -> CliResult<ChainRecord> {
        match self {
            Chain::Sampler(s) => Ok(s.step()?.record),
            Chain::Toy(t, toy) => Ok(t.step(toy)),
        }
    }

    fn snapshot(&self) -> ChainState {
        match self {
            Chain::Sampler(s) => ChainState::Sampler(Box::new(s.checkpoint())),
            Chain::Toy(t, _) => ChainState::Toy(t.clone()),
        }
    }

    fn shape(&self) -> (usize, usize) {
        match self {
            Chain::Sampler(s) => (s.state().x.len(), s.proposal().sigmas().len()),
            Chain::Toy(..) => (1, 0),
        }
    }

    fn blocks(&self) -> usize {
        match self {
            Chain::Sampler(s) => s.proposal().blocks(),
            Chain::Toy(..) => 1,
        }
    }
}

/// Summary statistics of one chain, computed from its trace file.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSummary {
    pub chain: u32,
    pub iterations: u64,
    pub burn_in: u64,
    pub efficiency: Option<EfficiencySummary>,
    /// Post-burn-in sums, for pooling across chains.
    pub attempts: u64,
    pub acc1: u64,
    pub acc2: Option<u64>,
    pub mean: Vec<f64>,
    pub n_fine: u64,
    pub n_coarse: u64,
    /// Whether fine evaluations equal stage-one acceptances plus one.
    pub cost_identity: Option<bool>,
}

pub struct VariantReport {
    pub variant: Variant,
    pub chains: Vec<ChainSummary>,
    pub cost: CostRatio,
    pub fine_seconds: f64,
    pub coarse_seconds: f64,
    pub wall_seconds: f64,
    /// First error by chain index, if any chain failed.
    pub error: Option<CliError>,
}

impl VariantReport {
    /// Stage-two rate pooled over chains.
    pub fn pooled_beta(&self) -> Option<f64> {
        let acc1: u64 = self.chains.iter().map(|c| c.acc1).sum();
        let acc2: Option<u64> = self.chains.iter().map(|c| c.acc2).sum();
        acc2.filter(|_| acc1 > 0).map(|a| a as f64 / acc1 as f64)
    }

    pub fn pooled_alpha(&self) -> Option<f64> {
        let att: u64 = self.chains.iter().map(|c| c.attempts).sum();
        let acc1: u64 = self.chains.iter().map(|c| c.acc1).sum();
        (att > 0).then(|| acc1 as f64 / att as f64)
    }

    /// Mean log-likelihood IACT over chains, and whether every estimate is reliable.
    pub fn mean_tau(&self) -> Option<(f64, bool)> {
        let taus: Vec<_> = self
            .chains
            .iter()
            .filter_map(|c| c.efficiency.as_ref().and_then(|e| e.tau))
            .collect();
        if taus.is_empty() || taus.len() < self.chains.len() {
            return None;
        }
        let mean = taus.iter().map(|t| t.tau).sum::<f64>() / taus.len() as f64;
        Some((mean, taus.iter().all(|t| t.reliable)))
    }

    pub fn total_ess(&self) -> Option<f64> {
        self.chains
            .iter()
            .map(|c| c.efficiency.as_ref().and_then(|e| e.ess))
            .sum()
    }
}

fn chain_meta(ctx: &Context, v: &Variant, chain: u32, blocks: usize) -> Meta {
    let mut m = Meta::new();
    m.insert("config_hash".into(), ctx.hash.clone());
    m.insert("chain".into(), chain.to_string());
    m.insert("seed".into(), ctx.seed().to_string());
    m.insert("kernel".into(), v.kernel.name().into());
    m.insert("scheme".into(), v.scheme.name().into());
    m.insert("blocks".into(), blocks.to_string());
    m
}

pub fn trace_path(dir: &Path, chain: u32) -> PathBuf {
    dir.join(format!("chain_{chain}.csv"))
}

pub fn checkpoint_path(dir: &Path, chain: u32) -> PathBuf {
    dir.join(format!("checkpoint_{chain}.json"))
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    // write-then-rename so an interrupted write never leaves a torn file
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> CliResult<CheckpointFile> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::format(path, e.to_string()))
}

fn save_checkpoint(ctx: &Context, dir: &Path, chain: u32, c: &Chain) -> CliResult<()> {
    let file = CheckpointFile {
        version: VERSION.into(),
        config_hash: ctx.hash.clone(),
        chain,
        state: c.snapshot(),
    };
    let text = serde_json::to_string(&file).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_file(&checkpoint_path(dir, chain), &text)
}

fn save_aem(ctx: &Context, dir: &Path, chain: u32, c: &Chain) -> CliResult<()> {
    if let Chain::Sampler(s) = c {
        if let Some(aem) = s.approximation().aem() {
            let mut text = header_block(&[("config_hash".to_string(), ctx.hash.clone())].into());
            text += &aem.to_text();
            write_file(&dir.join(format!("aem_{chain}.txt")), &text)?;
        }
    }
    Ok(())
}

/// Source of the chain state for one chain.
enum Start {
    Fresh,
    Resume(Box<CheckpointFile>),
}

fn open_chain(
    ctx: &Context,
    v: &Variant,
    posterior: Option<&Arc<Posterior>>,
    chain: u32,
    start: Start,
) -> CliResult<Chain> {
    match (start, posterior) {
        (Start::Fresh, Some(post)) => Ok(Chain::Sampler(Box::new(build_sampler(
            &ctx.cfg,
            &ctx.resolved,
            post,
            v.kernel,
            v.scheme,
            ctx.seed(),
            chain,
        )?))),
        (Start::Fresh, None) => {
            let toy = discrete_toy();
            let x0 = match &ctx.cfg.config.problem.x0 {
                Some(x) => {
                    let s = x.get_ref();
                    if s.len() != 1 || s[0].fract() != 0.0 || !(0.0..toy.target.len() as f64).contains(&s[0]) {
                        return Err(ctx.cfg.error_at(x.span(), "toy x0 must be a single state index 0..6"));
                    }
                    s[0] as usize
                }
                None => toy.target.len() / 2,
            };
            Ok(Chain::Toy(Box::new(ToyChain::new(v.kernel, x0, chain_stream(ctx.seed(), chain))), toy))
        }
        (Start::Resume(cp), Some(post)) => match cp.state {
            ChainState::Sampler(s) => Ok(Chain::Sampler(Box::new(Sampler::from_checkpoint(post.clone(), *s)?))),
            ChainState::Toy(_) => Err(CliError::Config("checkpoint is for the discrete toy".into())),
        },
        (Start::Resume(cp), None) => match cp.state {
            ChainState::Toy(t) => Ok(Chain::Toy(t, discrete_toy())),
            ChainState::Sampler(_) => Err(CliError::Config("checkpoint is not for the discrete toy".into())),
        },
    }
}

/// Runs one chain to the configured length, writing its trace and
/// checkpoints as it goes.
fn drive_chain(ctx: &Context, v: &Variant, post: Option<&Arc<Posterior>>, chain: u32, start: Start) -> CliResult<()> {
    let resuming = matches!(start, Start::Resume(_));
    let mut c = open_chain(ctx, v, post, chain, start)?;
    let meta = chain_meta(ctx, v, chain, c.blocks());
    let tp = trace_path(&v.dir, chain);
    let (dim, groups) = c.shape();
    let mut w = if resuming {
        TraceWriter::resume(&tp, &meta, c.iteration())?
    } else {
        TraceWriter::create(&tp, &meta, dim, groups)?
    };
    let total = ctx.iterations();
    let interval = ctx.cfg.config.checkpoint_interval;
    let progress = (total / 10).max(1);
    let mut outcome = Ok(());
    while c.iteration() < total {
        match c.step() {
            Ok(r) => w.write(&r)?,
            Err(e) => {
                log::error!("chain {chain} stopped at iteration {}: {e}", c.iteration());
                outcome = Err(e);
                break;
            }
        }
        let n = c.iteration();
        if interval > 0 && n % interval == 0 && n < total {
            w.flush()?;
            save_checkpoint(ctx, &v.dir, chain, &c)?;
        }
        if n % progress == 0 {
            log::info!("{} chain {chain}: {n}/{total}", v.dir.display());
        }
    }
    w.flush()?;
    save_checkpoint(ctx, &v.dir, chain, &c)?;
    save_aem(ctx, &v.dir, chain, &c)?;
    outcome
}

/// Reads a chain's trace back and summarizes its post-burn-in part.
pub fn summarize_chain(ctx: &Context, dir: &Path, chain: u32, post: Option<&Posterior>) -> CliResult<ChainSummary> {
    let path = trace_path(dir, chain);
    let mut t = read_trace(&path)?;
    if let Some(p) = post {
        t.reconstruct_log_like(|x| p.log_prior(x));
    } else {
        t.reconstruct_log_like(|_| 0.0);
    }
    let recs = &t.records;
    let burn_in = ctx.resolved.burn_in.min(recs.len() as u64);
    let kept = &recs[burn_in as usize..];
    let efficiency = if kept.is_empty() {
        None
    } else {
        Some(acceptance_summary(recs, burn_in as usize)?)
    };
    let dim = t.dim;
    let mut mean = vec![0.0; dim];
    for r in kept {
        for (m, v) in mean.iter_mut().zip(&r.x) {
            *m += v / kept.len() as f64;
        }
    }
    let last = recs.last();
    let all_acc1: u64 = recs.iter().map(|r| u64::from(r.acc1)).sum();
    let is_da = recs.first().is_some_and(|r| r.acc2.is_some());
    Ok(ChainSummary {
        chain,
        iterations: recs.len() as u64,
        burn_in,
        efficiency,
        attempts: kept.iter().map(|r| u64::from(r.attempts)).sum(),
        acc1: kept.iter().map(|r| u64::from(r.acc1)).sum(),
        acc2: kept.iter().map(|r| r.acc2.map(u64::from)).sum(),
        mean,
        n_fine: last.map_or(0, |r| r.n_fine),
        n_coarse: last.map_or(0, |r| r.n_coarse),
        cost_identity: (is_da && last.is_some()).then(|| last.unwrap().n_fine == all_acc1 + 1),
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(format_float).unwrap_or_default()
}

pub const SUMMARY_COLUMNS: &str =
    "chain,iterations,burn_in,samples,alpha,beta,tau,tau_reliable,ess,fine_per_iter,coarse_per_iter,n_fine,n_coarse";

fn summary_row(s: &ChainSummary) -> String {
    let e = s.efficiency.as_ref();
    let mut row = format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{}",
        s.chain,
        s.iterations,
        s.burn_in,
        e.map_or(0, |e| e.samples),
        opt(e.and_then(|e| e.alpha)),
        opt(e.and_then(|e| e.beta)),
        opt(e.and_then(|e| e.tau.map(|t| t.tau))),
        e.and_then(|e| e.tau).map_or(String::new(), |t| t.reliable.to_string()),
        opt(e.and_then(|e| e.ess)),
        opt(e.map(|e| e.fine_per_iter)),
        opt(e.map(|e| e.coarse_per_iter)),
        s.n_fine,
        s.n_coarse
    );
    for m in &s.mean {
        row.push(',');
        row.push_str(&format_float(*m));
    }
    row
}

fn summary_text(ctx: &Context, v: &Variant, s: &ChainSummary) -> String {
    let mut t = header_block(&[("config_hash".to_string(), ctx.hash.clone())].into());
    let values = summary_row(s);
    for (k, val) in SUMMARY_COLUMNS.split(',').zip(values.split(',')) {
        let _ = writeln!(t, "{k}={val}");
    }
    let _ = writeln!(t, "kernel={}", v.kernel.name());
    let _ = writeln!(t, "scheme={}", v.scheme.name());
    for (i, m) in s.mean.iter().enumerate() {
        let _ = writeln!(t, "mean_x_{}={}", i + 1, format_float(*m));
    }
    if let Some(e) = &s.efficiency {
        for (i, tau) in e.parameter_tau.iter().enumerate() {
            let _ = writeln!(t, "tau_x_{}={}", i + 1, opt(tau.map(|t| t.tau)));
        }
    }
    if let Some(ok) = s.cost_identity {
        let _ = writeln!(t, "fine_equals_acc1_plus_one={ok}");
    }
    t
}

/// Which chains to (re)start from checkpoints.
#[derive(Debug, Clone, Default)]
pub enum ResumeFrom {
    #[default]
    None,
    /// Every chain from `checkpoint_k.json` in the variant directory.
    All,
    /// One chain from a checkpoint file.
    One(PathBuf),
}

/// Runs all chains of a variant and writes per-chain and pooled summaries.
pub fn run_variant(ctx: &Context, v: &Variant, resume: &ResumeFrom) -> CliResult<VariantReport> {
    fs::create_dir_all(&v.dir).map_err(|e| CliError::io(&v.dir, e))?;
    let problem: Option<Problem> = match ctx.resolved.problem {
        ProblemKind::DiscreteToy => None,
        k => Some(build_problem(&ctx.cfg, k)?),
    };
    let post = problem.as_ref().map(|p| &p.posterior);

    let mut starts = Vec::new();
    for k in 0..ctx.chains() {
        let start = match resume {
            ResumeFrom::None => Some(Start::Fresh),
            ResumeFrom::All => Some(Start::Resume(Box::new(load_for(ctx, &checkpoint_path(&v.dir, k), k)?))),
            ResumeFrom::One(p) => {
                let cp = read_checkpoint(p)?;
                if cp.chain == k {
                    Some(check_hash(ctx, p, Start::Resume(Box::new(cp)))?)
                } else {
                    None
                }
            }
        };
        starts.push((k, start));
    }
    if let ResumeFrom::One(p) = resume {
        if starts.iter().all(|(_, s)| s.is_none()) {
            return Err(CliError::Config(format!(
                "{}: checkpoint chain is outside the configured {} chains",
                p.display(),
                ctx.chains()
            )));
        }
    }

    let wall = Instant::now();
    let results: Vec<(u32, CliResult<()>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = starts
            .into_iter()
            .filter_map(|(k, s)| s.map(|s| (k, s)))
            .map(|(k, s)| (k, scope.spawn(move || drive_chain(ctx, v, post, k, s))))
            .collect();
        handles
            .into_iter()
            .map(|(k, h)| (k, h.join().unwrap_or_else(|_| Err(CliError::Runtime(format!("chain {k} panicked"))))))
            .collect()
    });
    let wall_seconds = wall.elapsed().as_secs_f64();
    let error = results.into_iter().find_map(|(_, r)| r.err());

    let mut chains = Vec::new();
    let mut csv = format!("{}{SUMMARY_COLUMNS}", header_block(&[("config_hash".to_string(), ctx.hash.clone())].into()));
    let dim = post.map_or(1, |p| p.param_dim());
    for i in 1..=dim {
        let _ = write!(csv, ",mean_x_{i}");
    }
    csv.push('\n');
    for k in 0..ctx.chains() {
        if !trace_path(&v.dir, k).exists() {
            continue;
        }
        let s = summarize_chain(ctx, &v.dir, k, post.map(|p| p.as_ref()))?;
        write_file(&v.dir.join(format!("summary_{k}.txt")), &summary_text(ctx, v, &s))?;
        csv += &summary_row(&s);
        csv.push('\n');
        chains.push(s);
    }
    write_file(&v.dir.join("summary.csv"), &csv)?;

    let (cost, fs_, cs) = match &problem {
        Some(p) => (cost_ratio(&p.fine_timer, &p.coarse_timer), p.fine_timer.seconds(), p.coarse_timer.seconds()),
        None => (CostRatio { time: None, evals: None }, 0.0, 0.0),
    };
    let timing = format!(
        "{}wall_seconds={wall_seconds}\nfine_calls={}\nfine_seconds={fs_}\ncoarse_calls={}\ncoarse_seconds={cs}\ntime_ratio={}\neval_ratio={}\n",
        header_block(&[("config_hash".to_string(), ctx.hash.clone())].into()),
        problem.as_ref().map_or(0, |p| p.fine_timer.calls()),
        problem.as_ref().map_or(0, |p| p.coarse_timer.calls()),
        cost.time.map_or(String::new(), |v| v.to_string()),
        cost.evals.map_or(String::new(), |v| v.to_string()),
    );
    write_file(&v.dir.join("timing.txt"), &timing)?;

    Ok(VariantReport {
        variant: v.clone(),
        chains,
        cost,
        fine_seconds: fs_,
        coarse_seconds: cs,
        wall_seconds,
        error,
    })
}

fn check_hash(ctx: &Context, path: &Path, s: Start) -> CliResult<Start> {
    if let Start::Resume(cp) = &s {
        if cp.config_hash != ctx.hash {
            return Err(CliError::Config(format!(
                "{}: checkpoint was written by a different configuration (hash {}, current {})",
                path.display(),
                cp.config_hash,
                ctx.hash
            )));
        }
    }
    Ok(s)
}

fn load_for(ctx: &Context, path: &Path, chain: u32) -> CliResult<CheckpointFile> {
    let cp = read_checkpoint(path)?;
    if cp.chain != chain {
        return Err(CliError::format(path, format!("checkpoint is for chain {}, expected {chain}", cp.chain)));
    }
    match check_hash(ctx, path, Start::Resume(Box::new(cp)))? {
        Start::Resume(cp) => Ok(*cp),
        Start::Fresh => unreachable!(),
    }
}

/// `run`: a single variant in the output directory.
pub fn cmd_run(ctx: &Context, resume: Option<&Path>) -> CliResult<VariantReport> {
    let (dir, from) = match resume {
        None => (ctx.out_dir()?, ResumeFrom::None),
        Some(p) if p.is_dir() => (p.to_path_buf(), ResumeFrom::All),
        Some(p) => (
            p.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf),
            ResumeFrom::One(p.to_path_buf()),
        ),
    };
    let v = Variant {
        kernel: ctx.resolved.kernel,
        scheme: ctx.resolved.scheme,
        dir,
    };
    let mut report = run_variant(ctx, &v, &from)?;
    match report.error.take() {
        Some(e) => Err(e),
        None => Ok(report),
    }
}
