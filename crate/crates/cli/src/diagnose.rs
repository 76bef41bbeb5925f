//! The `diagnose` command: efficiency report and plot-ready tables from
//! trace files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ada_core::diagnostics::{acceptance_summary, histogram, iact, running_mean, EfficiencySummary, IactEstimate};

use crate::error::{CliError, CliResult};
use crate::trace::{format_float, header_block, read_trace, Trace};

/// Maps a state to its log prior density.
pub type LogPrior<'a> = &'a dyn Fn(&[f64]) -> f64;

#[derive(Debug, Clone)]
pub struct DiagnoseOptions {
    pub burn_in: u64,
    pub bins: usize,
    /// Running-mean table row spacing.
    pub stride: usize,
    pub out: Option<PathBuf>,
}

impl Default for DiagnoseOptions {
    fn default() -> Self {
        Self {
            burn_in: 0,
            bins: 50,
            stride: 100,
            out: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnStats {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    /// `None` for constant columns.
    pub iact: Option<IactEstimate>,
}

impl ColumnStats {
    pub fn ess(&self, n: usize) -> Option<f64> {
        self.iact.map(|t| n as f64 / t.tau)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceDiagnosis {
    pub path: PathBuf,
    pub rows: usize,
    pub samples: usize,
    pub columns: Vec<ColumnStats>,
    pub efficiency: Option<EfficiencySummary>,
}

/// Columns that describe the sampled state rather than bookkeeping.
fn analysed_columns(t: &Trace) -> Vec<String> {
    t.columns
        .iter()
        .filter(|c| c.starts_with("x_") || c.as_str() == "log_post")
        .cloned()
        .collect()
}

pub fn diagnose_trace(path: &Path, t: &Trace, opts: &DiagnoseOptions) -> CliResult<TraceDiagnosis> {
    let burn = (opts.burn_in as usize).min(t.records.len());
    let samples = t.records.len() - burn;
    let mut columns = Vec::new();
    for name in analysed_columns(t) {
        let all = t.column(&name).expect("listed column");
        let s = &all[burn..];
        if s.is_empty() {
            continue;
        }
        let n = s.len() as f64;
        let mean = s.iter().sum::<f64>() / n;
        let sd = if s.len() > 1 {
            (s.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        columns.push(ColumnStats {
            name,
            mean,
            sd,
            iact: iact(s).ok(),
        });
    }
    let efficiency = if samples > 0 {
        Some(acceptance_summary(&t.records, burn)?)
    } else {
        None
    };
    Ok(TraceDiagnosis {
        path: path.to_path_buf(),
        rows: t.records.len(),
        samples,
        columns,
        efficiency,
    })
}

pub fn render(d: &TraceDiagnosis) -> String {
    let mut s = format!("{}: {} rows, {} after burn-in\n", d.path.display(), d.rows, d.samples);
    if let Some(e) = &d.efficiency {
        let f = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        let _ = writeln!(
            s,
            "  stage-one rate {}  stage-two rate {}  fine/iter {:.4}  coarse/iter {:.4}",
            f(e.alpha),
            f(e.beta),
            e.fine_per_iter,
            e.coarse_per_iter
        );
    }
    let _ = writeln!(s, "  {:<10} {:>14} {:>12} {:>10} {:>10}", "column", "mean", "sd", "IACT", "ESS");
    for c in &d.columns {
        let (tau, ess) = match c.iact {
            Some(t) => (
                format!("{:.2}{}", t.tau, if t.reliable { "" } else { "*" }),
                format!("{:.0}", d.samples as f64 / t.tau),
            ),
            None => ("-".into(), "-".into()),
        };
        let _ = writeln!(s, "  {:<10} {:>14.6e} {:>12.4e} {:>10} {:>10}", c.name, c.mean, c.sd, tau, ess);
    }
    s
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Writes `<stem>_columns.csv`, `<stem>_running_mean.csv` and one
/// `<stem>_hist_<column>.csv` per analysed column into `dir`.
pub fn write_tables(dir: &Path, t: &Trace, d: &TraceDiagnosis, opts: &DiagnoseOptions) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let stem = d.path.file_stem().and_then(|s| s.to_str()).unwrap_or("trace");
    let head = header_block(&t.meta);
    let burn = (opts.burn_in as usize).min(t.records.len());

    let mut cols = head.clone() + "column,mean,sd,iact,iact_reliable,ess\n";
    for c in &d.columns {
        let _ = writeln!(
            cols,
            "{},{},{},{},{},{}",
            c.name,
            format_float(c.mean),
            format_float(c.sd),
            c.iact.map_or(String::new(), |t| format_float(t.tau)),
            c.iact.map_or(String::new(), |t| t.reliable.to_string()),
            c.ess(d.samples).map_or(String::new(), format_float)
        );
    }
    write(&dir.join(format!("{stem}_columns.csv")), &cols)?;

    let names: Vec<String> = d.columns.iter().map(|c| c.name.clone()).collect();
    let series: Vec<Vec<(usize, f64)>> = names
        .iter()
        .map(|n| running_mean(&t.column(n).expect("listed column")[burn..], opts.stride))
        .collect();
    let mut rm = head.clone() + "n," + &names.join(",") + "\n";
    if let Some(first) = series.first() {
        for (i, (n, _)) in first.iter().enumerate() {
            rm += &n.to_string();
            for s in &series {
                rm.push(',');
                rm += &format_float(s[i].1);
            }
            rm.push('\n');
        }
    }
    write(&dir.join(format!("{stem}_running_mean.csv")), &rm)?;

    for n in &names {
        let s = &t.column(n).expect("listed column")[burn..];
        if let Ok(h) = histogram(s, opts.bins) {
            let mut text = head.clone() + "lower,upper,count\n";
            for (k, c) in h.counts.iter().enumerate() {
                let _ = writeln!(text, "{},{},{c}", format_float(h.edges[k]), format_float(h.edges[k + 1]));
            }
            write(&dir.join(format!("{stem}_hist_{n}.csv")), &text)?;
        }
    }
    Ok(())
}

/// Diagnoses each trace, optionally reconstructing log-likelihoods with
/// `log_prior`, and returns the printed report.
pub fn cmd_diagnose(
    paths: &[PathBuf],
    opts: &DiagnoseOptions,
    log_prior: Option<LogPrior<'_>>,
) -> CliResult<(String, Vec<TraceDiagnosis>)> {
    if paths.is_empty() {
        return Err(CliError::Config("diagnose needs at least one trace file".into()));
    }
    let mut text = String::new();
    let mut out = Vec::new();
    for p in paths {
        let mut t = read_trace(p)?;
        if let Some(lp) = log_prior {
            t.reconstruct_log_like(lp);
        }
        let d = diagnose_trace(p, &t, opts)?;
        if let Some(dir) = &opts.out {
            write_tables(dir, &t, &d, opts)?;
        }
        text += &render(&d);
        out.push(d);
    }
    Ok((text, out))
}
