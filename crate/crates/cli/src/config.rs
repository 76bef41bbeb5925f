//! Run configuration: TOML text with dotted sections, strict keys.
//!
//! ```toml
//! seed = 7
//! iterations = 20000
//!
//! [problem]
//! kind = "fv-diffusion"
//!
//! [sampler]
//! kernel = "ada"
//! scheme = "approx5"
//!
//! [proposal]
//! kind = "gcam"
//! ```

use std::path::PathBuf;
use std::str::FromStr;

use ada_core::aem::{ErrorInput, Scheme};
use ada_core::kernel::{validate_combination, KernelKind, DEFAULT_MAX_RETRIES};
use ada_core::proposal::AdaptConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::Spanned;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub iterations: Spanned<u64>,
    /// Defaults to a quarter of `iterations`.
    #[serde(default)]
    pub burn_in: Option<Spanned<u64>>,
    #[serde(default = "default_chains")]
    pub chains: Spanned<u32>,
    /// Write a checkpoint every this many iterations; 0 writes only at the end.
    #[serde(default)]
    pub checkpoint_interval: u64,
    #[serde(default, skip_serializing)]
    pub out: Option<PathBuf>,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub proposal: ProposalSection,
    #[serde(default)]
    pub benchmark: BenchmarkSection,
}

fn default_seed() -> u64 {
    1
}

fn default_chains() -> Spanned<u32> {
    Spanned::new(0..0, 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub kind: Spanned<String>,
    /// Seed of the synthetic observation noise, shared by all chains.
    #[serde(default = "default_seed")]
    pub data_seed: u64,
    /// Starting point; a prior draw from the chain's own stream when absent.
    #[serde(default)]
    pub x0: Option<Spanned<Vec<f64>>>,
    #[serde(default)]
    pub analytic: AnalyticOverrides,
    #[serde(default)]
    pub fv: FvOverrides,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyticOverrides {
    pub epsilon: Option<f64>,
    pub a: Option<Vec<Vec<f64>>>,
    pub prior_mean: Option<[f64; 2]>,
    pub prior_variance: Option<[f64; 2]>,
    pub noise_sigma: Option<f64>,
    pub x_true: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FvOverrides {
    pub length: Option<f64>,
    pub zones: Option<usize>,
    pub fine_cells: Option<usize>,
    pub coarse_cells: Option<usize>,
    pub horizon: Option<f64>,
    pub fine_steps: Option<usize>,
    pub coarse_steps: Option<usize>,
    pub influx: Option<f64>,
    pub sensors: Option<Vec<f64>>,
    pub times: Option<Vec<f64>>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub x_true: Option<Vec<f64>>,
    pub noise_fraction: Option<f64>,
    /// A nonpositive value selects the uniform prior on the bounds.
    pub prior_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    #[serde(default = "default_kernel")]
    pub kernel: Spanned<String>,
    #[serde(default = "default_scheme")]
    pub scheme: Spanned<String>,
    /// Kernel-dependent default when absent.
    pub adapt_proposal: Option<bool>,
    pub adapt_aem: Option<bool>,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default)]
    pub warm_start: u64,
    /// Prior samples for the a-priori error model.
    #[serde(default = "default_prior_samples")]
    pub prior_aem_samples: Spanned<usize>,
    #[serde(default = "default_error_input")]
    pub error_input: Spanned<String>,
    pub freeze_aem_after: Option<u64>,
}

fn default_kernel() -> Spanned<String> {
    Spanned::new(0..0, "mh".into())
}
fn default_scheme() -> Spanned<String> {
    Spanned::new(0..0, "exact".into())
}
fn default_retries() -> u32 {
    DEFAULT_MAX_RETRIES
}
fn default_prior_samples() -> Spanned<usize> {
    Spanned::new(0..0, 1000)
}
fn default_error_input() -> Spanned<String> {
    Spanned::new(0..0, "plain".into())
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self {
            kernel: default_kernel(),
            scheme: default_scheme(),
            adapt_proposal: None,
            adapt_aem: None,
            max_retries: DEFAULT_MAX_RETRIES,
            warm_start: 0,
            prior_aem_samples: default_prior_samples(),
            error_input: default_error_input(),
            freeze_aem_after: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposalSection {
    #[serde(default = "default_proposal")]
    pub kind: Spanned<String>,
    /// Contiguous GCAM group sizes; one group of all parameters when absent.
    pub groups: Option<Spanned<Vec<usize>>>,
    /// Random-walk scale; 2.38/√d when absent.
    pub scale: Option<Spanned<f64>>,
    #[serde(default = "default_beta_mix")]
    pub beta_mix: Spanned<f64>,
    #[serde(default = "default_batch")]
    pub batch: Spanned<u64>,
    #[serde(default = "default_target_rate")]
    pub target_rate: Spanned<f64>,
}

fn default_proposal() -> Spanned<String> {
    Spanned::new(0..0, "gcam".into())
}
fn default_beta_mix() -> Spanned<f64> {
    Spanned::new(0..0, AdaptConfig::default().beta_mix)
}
fn default_batch() -> Spanned<u64> {
    Spanned::new(0..0, AdaptConfig::default().batch)
}
fn default_target_rate() -> Spanned<f64> {
    Spanned::new(0..0, AdaptConfig::default().target_rate)
}

impl Default for ProposalSection {
    fn default() -> Self {
        Self {
            kind: default_proposal(),
            groups: None,
            scale: None,
            beta_mix: default_beta_mix(),
            batch: default_batch(),
            target_rate: default_target_rate(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSection {
    #[serde(default = "default_bench_schemes")]
    pub schemes: Spanned<Vec<String>>,
    /// Adds the state-dependent scheme without an error model.
    #[serde(default)]
    pub include_approx4: bool,
}

fn default_bench_schemes() -> Spanned<Vec<String>> {
    Spanned::new(
        0..0,
        ["approx1", "approx2", "approx3", "approx5"].map(String::from).to_vec(),
    )
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        Self {
            schemes: default_bench_schemes(),
            include_approx4: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    Analytic,
    FvDiffusion,
    DiscreteToy,
}

impl FromStr for ProblemKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "analytic" => Ok(ProblemKind::Analytic),
            "fv-diffusion" => Ok(ProblemKind::FvDiffusion),
            "discrete-toy" => Ok(ProblemKind::DiscreteToy),
            _ => Err(format!(
                "unknown problem kind '{s}' (expected analytic, fv-diffusion or discrete-toy)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProposalKindName {
    RandomWalk,
    Am,
    Gcam,
}

impl FromStr for ProposalKindName {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "rw" => Ok(ProposalKindName::RandomWalk),
            "am" => Ok(ProposalKindName::Am),
            "gcam" => Ok(ProposalKindName::Gcam),
            _ => Err(format!("unknown proposal '{s}' (expected rw, am or gcam)")),
        }
    }
}

/// A parsed config together with its source text, for error locations.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub source: String,
    pub origin: String,
}

/// Validated choices extracted from a config.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub problem: ProblemKind,
    pub kernel: KernelKind,
    pub scheme: Scheme,
    pub proposal: ProposalKindName,
    pub error_input: ErrorInput,
    pub adapt: AdaptConfig,
    pub burn_in: u64,
    pub bench_schemes: Vec<Scheme>,
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

impl LoadedConfig {
    pub fn parse(source: &str, origin: &str) -> CliResult<Self> {
        let config: RunConfig = toml::from_str(source).map_err(|e| {
            let at = e
                .span()
                .map(|s| {
                    let (l, c) = line_col(source, s.start);
                    format!("{origin}:{l}:{c}: ")
                })
                .unwrap_or_else(|| format!("{origin}: "));
            CliError::Config(format!("{at}{}", e.message()))
        })?;
        Ok(Self {
            config,
            source: source.to_string(),
            origin: origin.to_string(),
        })
    }

    pub fn load(path: &std::path::Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Error pointing at the value with span `span`; default values have an
    /// empty span and report the file only.
    pub fn error_at(&self, span: std::ops::Range<usize>, msg: impl std::fmt::Display) -> CliError {
        if span.is_empty() && span.start == 0 {
            return CliError::Config(format!("{}: {msg}", self.origin));
        }
        let (l, c) = line_col(&self.source, span.start);
        CliError::Config(format!("{}:{l}:{c}: {msg}", self.origin))
    }

    pub fn resolve(&self) -> CliResult<Resolved> {
        let c = &self.config;
        let problem = ProblemKind::from_str(c.problem.kind.get_ref()).map_err(|m| self.error_at(c.problem.kind.span(), m))?;
        let kernel = KernelKind::from_str(c.sampler.kernel.get_ref())
            .map_err(|e| self.error_at(c.sampler.kernel.span(), e))?;
        let scheme = Scheme::from_str(c.sampler.scheme.get_ref())
            .map_err(|e| self.error_at(c.sampler.scheme.span(), e))?;
        validate_combination(kernel, scheme).map_err(|e| {
            let span = if c.sampler.scheme.span().is_empty() {
                c.sampler.kernel.span()
            } else {
                c.sampler.scheme.span()
            };
            self.error_at(span, format!("kernel '{}' with scheme '{}': {e}", kernel.name(), scheme))
        })?;
        let proposal = ProposalKindName::from_str(c.proposal.kind.get_ref())
            .map_err(|m| self.error_at(c.proposal.kind.span(), m))?;
        let error_input = match c.sampler.error_input.get_ref().as_str() {
            "plain" => ErrorInput::Plain,
            "increment" => ErrorInput::Increment,
            other => {
                return Err(self.error_at(
                    c.sampler.error_input.span(),
                    format!("unknown error_input '{other}' (expected plain or increment)"),
                ))
            }
        };
        let adapt = AdaptConfig {
            beta_mix: *c.proposal.beta_mix.get_ref(),
            batch: *c.proposal.batch.get_ref(),
            target_rate: *c.proposal.target_rate.get_ref(),
        };
        adapt.validate().map_err(|e| {
            let p = &c.proposal;
            let span = if !(adapt.beta_mix > 0.0 && adapt.beta_mix < 1.0) {
                p.beta_mix.span()
            } else if adapt.batch == 0 {
                p.batch.span()
            } else {
                p.target_rate.span()
            };
            self.error_at(span, e)
        })?;
        if let Some(s) = &c.proposal.scale {
            if !(s.get_ref().is_finite() && *s.get_ref() > 0.0) {
                return Err(self.error_at(s.span(), "proposal scale must be positive"));
            }
        }
        if let Some(g) = &c.proposal.groups {
            if g.get_ref().is_empty() || g.get_ref().contains(&0) {
                return Err(self.error_at(g.span(), "groups must be a nonempty list of positive sizes"));
            }
            if proposal != ProposalKindName::Gcam {
                return Err(self.error_at(g.span(), "groups only apply to the gcam proposal"));
            }
        }
        if *c.chains.get_ref() == 0 {
            return Err(self.error_at(c.chains.span(), "chains must be at least 1"));
        }
        let iterations = *c.iterations.get_ref();
        let burn_in = match &c.burn_in {
            Some(b) => {
                if *b.get_ref() > iterations {
                    return Err(self.error_at(b.span(), "burn_in cannot exceed iterations"));
                }
                *b.get_ref()
            }
            None => iterations / 4,
        };
        if scheme == Scheme::Approx2 && *c.sampler.prior_aem_samples.get_ref() < 2 {
            return Err(self.error_at(
                c.sampler.prior_aem_samples.span(),
                "prior_aem_samples must be at least 2",
            ));
        }
        if problem == ProblemKind::DiscreteToy {
            if kernel == KernelKind::Ada {
                return Err(self.error_at(
                    c.sampler.kernel.span(),
                    "the discrete toy runs with kernel 'mh' or 'da' only",
                ));
            }
            if !matches!(scheme, Scheme::Exact | Scheme::Approx1) {
                return Err(self.error_at(
                    c.sampler.scheme.span(),
                    "the discrete toy has a fixed surrogate; use scheme 'exact' (mh) or 'approx1' (da)",
                ));
            }
        }
        let mut bench_schemes = Vec::new();
        for name in c.benchmark.schemes.get_ref() {
            let s = Scheme::from_str(name).map_err(|e| self.error_at(c.benchmark.schemes.span(), e))?;
            if s == Scheme::Exact || s == Scheme::Approx4 {
                return Err(self.error_at(
                    c.benchmark.schemes.span(),
                    "benchmark schemes are approx1, approx2, approx3 and approx5 (approx4 via include_approx4)",
                ));
            }
            bench_schemes.push(s);
        }
        if c.benchmark.include_approx4 {
            bench_schemes.push(Scheme::Approx4);
        }
        Ok(Resolved {
            problem,
            kernel,
            scheme,
            proposal,
            error_input,
            adapt,
            burn_in,
            bench_schemes,
        })
    }

    /// SHA-256 of the effective configuration (output directory excluded).
    pub fn hash(&self) -> String {
        config_hash(&self.config)
    }
}

pub fn config_hash(config: &RunConfig) -> String {
    let canonical = serde_json::to_string(config).expect("config serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str) -> CliResult<Resolved> {
        LoadedConfig::parse(text, "test.toml")?.resolve()
    }

    const MINIMAL: &str = "iterations = 100\n[problem]\nkind = \"analytic\"\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let r = load(MINIMAL).unwrap();
        assert_eq!(r.kernel, KernelKind::Mh);
        assert_eq!(r.scheme, Scheme::Exact);
        assert_eq!(r.burn_in, 25);
        assert_eq!(r.proposal, ProposalKindName::Gcam);
    }

    #[test]
    fn unknown_keys_are_rejected_with_a_line() {
        let text = "iterations = 100\n[problem]\nkind = \"analytic\"\nepsilonn = 0.2\n";
        let e = load(text).unwrap_err().to_string();
        assert!(e.contains("test.toml:4"), "{e}");
        assert!(e.contains("epsilonn"), "{e}");
    }

    #[test]
    fn invalid_combination_names_the_constraint_and_line() {
        let text = "iterations = 100\n[problem]\nkind = \"analytic\"\n[sampler]\nkernel = \"mh\"\nscheme = \"approx5\"\n";
        let e = load(text).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let m = e.to_string();
        assert!(m.contains("test.toml:6"), "{m}");
        assert!(m.contains("requires kernel 'ada'"), "{m}");
    }

    #[test]
    fn bad_values_point_at_their_line() {
        let text = "iterations = 100\nburn_in = 200\n[problem]\nkind = \"analytic\"\n";
        let m = load(text).unwrap_err().to_string();
        assert!(m.contains("test.toml:2"), "{m}");
        let text = "iterations = 100\n[problem]\nkind = \"fv\"\n";
        let m = load(text).unwrap_err().to_string();
        assert!(m.contains("test.toml:3") && m.contains("unknown problem kind"), "{m}");
        let text = "iterations = 100\n[problem]\nkind = \"analytic\"\n[proposal]\ntarget_rate = 1.5\n";
        let m = load(text).unwrap_err().to_string();
        assert!(m.contains("test.toml:5"), "{m}");
    }

    #[test]
    fn syntax_errors_carry_a_location() {
        let m = load("iterations = \n").unwrap_err().to_string();
        assert!(m.contains("test.toml:1"), "{m}");
    }

    #[test]
    fn hash_ignores_output_directory_but_not_seed() {
        let a = LoadedConfig::parse(MINIMAL, "a").unwrap();
        let mut b = a.clone();
        b.config.out = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.config.seed = 99;
        assert_ne!(a.hash(), b.hash());
    }
}
