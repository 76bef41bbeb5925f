//! The `benchmark` command: reference MH plus ADA under each approximation.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use ada_core::aem::Scheme;
use ada_core::diagnostics::speedup_factor;
use ada_core::kernel::KernelKind;

use crate::error::{CliError, CliResult};
use crate::run::{run_variant, Context, ResumeFrom, Variant, VariantReport};
use crate::trace::{format_float, header_block};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRow {
    pub name: String,
    pub kernel: KernelKind,
    pub scheme: Scheme,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub tau: Option<f64>,
    pub tau_reliable: bool,
    pub ess: Option<f64>,
    /// Mean coarse call time over mean fine call time.
    pub time_ratio: Option<f64>,
    /// Coarse calls per fine call.
    pub eval_ratio: Option<f64>,
    pub speedup: Option<f64>,
    /// `None` when every chain finished.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkReport {
    pub rows: Vec<BenchmarkRow>,
    pub out: PathBuf,
}

impl BenchmarkReport {
    pub fn complete(&self) -> bool {
        self.rows.iter().all(|r| r.failure.is_none())
    }

    pub fn row(&self, scheme: Scheme) -> Option<&BenchmarkRow> {
        self.rows.iter().find(|r| r.scheme == scheme)
    }

    /// Human-readable table.
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<10} {:>8} {:>8} {:>10} {:>10} {:>8} {:>10} {:>9}  {}\n",
            "variant", "alpha", "beta", "IACT", "ESS", "t*/t", "coarse/fine", "speedup", "status"
        );
        let f = |v: Option<f64>, p: usize| v.map_or("-".to_string(), |v| format!("{v:.p$}"));
        for r in &self.rows {
            let tau = match r.tau {
                Some(t) if r.tau_reliable => format!("{t:.1}"),
                Some(t) => format!("{t:.1}*"),
                None => "-".into(),
            };
            let _ = writeln!(
                s,
                "{:<10} {:>8} {:>8} {:>10} {:>10} {:>8} {:>10} {:>9}  {}",
                r.name,
                f(r.alpha, 3),
                f(r.beta, 3),
                tau,
                f(r.ess, 0),
                f(r.time_ratio, 3),
                f(r.eval_ratio, 2),
                f(r.speedup, 2),
                r.failure.as_deref().unwrap_or("ok")
            );
        }
        if self.rows.iter().any(|r| r.tau.is_some() && !r.tau_reliable) {
            s += "* IACT window did not close within n/4 lags; estimate unreliable\n";
        }
        if !self.complete() {
            s += "report INCOMPLETE: at least one variant failed\n";
        }
        s
    }
}

fn row_of(name: &str, rep: &VariantReport) -> BenchmarkRow {
    let tau = rep.mean_tau();
    BenchmarkRow {
        name: name.into(),
        kernel: rep.variant.kernel,
        scheme: rep.variant.scheme,
        alpha: rep.pooled_alpha(),
        beta: rep.pooled_beta(),
        tau: tau.map(|t| t.0),
        tau_reliable: tau.is_some_and(|t| t.1),
        ess: rep.total_ess(),
        time_ratio: rep.cost.time,
        eval_ratio: rep.cost.evals,
        speedup: None,
        failure: rep.error.as_ref().map(|e| e.to_string()),
    }
}

fn failed_row(name: &str, kernel: KernelKind, scheme: Scheme, e: &CliError) -> BenchmarkRow {
    BenchmarkRow {
        name: name.into(),
        kernel,
        scheme,
        alpha: None,
        beta: None,
        tau: None,
        tau_reliable: false,
        ess: None,
        time_ratio: None,
        eval_ratio: None,
        speedup: None,
        failure: Some(e.to_string()),
    }
}

pub fn cmd_benchmark(ctx: &Context) -> CliResult<BenchmarkReport> {
    let out = ctx.out_dir()?;
    fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    let mut variants = vec![("reference".to_string(), KernelKind::Mh, Scheme::Exact)];
    for s in &ctx.resolved.bench_schemes {
        variants.push((s.name().to_string(), KernelKind::Ada, *s));
    }
    let mut rows = Vec::new();
    for (name, kernel, scheme) in variants {
        log::info!("benchmark variant {name}");
        let v = Variant {
            kernel,
            scheme,
            dir: out.join(&name),
        };
        let row = match run_variant(ctx, &v, &ResumeFrom::None) {
            Ok(rep) => row_of(&name, &rep),
            // configuration mistakes are not partial results
            Err(e @ CliError::Config(_)) => return Err(e),
            Err(e) => failed_row(&name, kernel, scheme, &e),
        };
        rows.push(row);
    }
    let tau_ref = rows[0].tau;
    for r in rows.iter_mut().skip(1) {
        r.speedup = match (tau_ref, r.tau, r.alpha, r.time_ratio) {
            (Some(tr), Some(t), Some(a), Some(c)) => speedup_factor(tr, t, a, c).ok(),
            _ => None,
        };
    }
    let report = BenchmarkReport { rows, out: out.clone() };
    write_report(ctx, &report)?;
    Ok(report)
}

/// Deterministic columns go to `benchmark.csv`; anything derived from wall
/// time goes to `benchmark_timing.csv`.
fn write_report(ctx: &Context, rep: &BenchmarkReport) -> CliResult<()> {
    let meta = [
        ("config_hash".to_string(), ctx.hash.clone()),
        ("status".to_string(), if rep.complete() { "complete" } else { "incomplete" }.to_string()),
    ]
    .into();
    let opt = |v: Option<f64>| v.map(format_float).unwrap_or_default();
    let mut det = header_block(&meta) + "variant,kernel,scheme,alpha,beta,tau,tau_reliable,ess,status\n";
    let mut timing = header_block(&meta) + "variant,time_ratio,eval_ratio,speedup\n";
    for r in &rep.rows {
        let status = r.failure.as_ref().map_or("ok".to_string(), |f| format!("\"failed: {}\"", f.replace('"', "'")));
        let _ = writeln!(
            det,
            "{},{},{},{},{},{},{},{},{}",
            r.name,
            r.kernel.name(),
            r.scheme.name(),
            opt(r.alpha),
            opt(r.beta),
            opt(r.tau),
            r.tau_reliable,
            opt(r.ess),
            status
        );
        let _ = writeln!(timing, "{},{},{},{}", r.name, opt(r.time_ratio), opt(r.eval_ratio), opt(r.speedup));
    }
    let p = rep.out.join("benchmark.csv");
    fs::write(&p, det).map_err(|e| CliError::io(&p, e))?;
    let p = rep.out.join("benchmark_timing.csv");
    fs::write(&p, timing).map_err(|e| CliError::io(&p, e))?;
    let p = rep.out.join("benchmark.txt");
    fs::write(&p, rep.table()).map_err(|e| CliError::io(&p, e))
}
