//! Statistical efficiency of chains: autocorrelation, integrated
//! autocorrelation time (IACT), effective sample size, acceptance rates and
//! the DA speed-up factor.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kernel::ChainRecord;

/// Window constant of the adaptive IACT estimator.
pub const DEFAULT_WINDOW_C: f64 = 5.0;

fn fft_in_place(re: &mut [f64], im: &mut [f64], inverse: bool) {
    let n = re.len();
    debug_assert!(n.is_power_of_two() && im.len() == n);
    let mut j = 0;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let ang = sign * 2.0 * core::f64::consts::PI / len as f64;
        let half = len / 2;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                // twiddles computed directly rather than by recurrence to
                // keep rounding error flat for long series
                let (s, c) = (ang * k as f64).sin_cos();
                let a = start + k;
                let b = a + half;
                let tr = re[b] * c - im[b] * s;
                let ti = re[b] * s + im[b] * c;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
            }
        }
        len <<= 1;
    }
}

fn check_series(series: &[f64]) -> Result<()> {
    if series.len() < 2 {
        return Err(invalid("series needs at least 2 values"));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("series"));
    }
    Ok(())
}

/// Biased sample autocorrelation `ρ̂(0..=max_lag)`, computed by FFT.
pub fn autocorrelation(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    check_series(series)?;
    let n = series.len();
    if max_lag >= n {
        return Err(invalid("max_lag must be below the series length"));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let size = (2 * n).next_power_of_two();
    let mut re = vec![0.0; size];
    let mut im = vec![0.0; size];
    for (r, v) in re.iter_mut().zip(series) {
        *r = v - mean;
    }
    let c0 = re.iter().map(|v| v * v).sum::<f64>();
    if c0 == 0.0 {
        return Err(Error::ZeroVariance);
    }
    fft_in_place(&mut re, &mut im, false);
    for (r, i) in re.iter_mut().zip(im.iter_mut()) {
        *r = *r * *r + *i * *i;
        *i = 0.0;
    }
    fft_in_place(&mut re, &mut im, true);
    // inverse transform is unnormalized: divide by `size`
    let scale = 1.0 / (size as f64 * c0);
    let mut rho: Vec<f64> = re[..=max_lag].iter().map(|v| v * scale).collect();
    rho[0] = 1.0;
    Ok(rho)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IactEstimate {
    pub tau: f64,
    /// Summation window M.
    pub window: usize,
    /// `false` when the window never closed before `max_lag`.
    pub reliable: bool,
}

/// `τ̂ = 1 + 2 Σ_{i=1}^{M} ρ̂(i)` with the smallest `M ≥ c τ̂(M)`, searched up
/// to `n/4`.
pub fn iact(series: &[f64]) -> Result<IactEstimate> {
    iact_with(series, DEFAULT_WINDOW_C, (series.len() / 4).max(1))
}

pub fn iact_with(series: &[f64], c: f64, max_lag: usize) -> Result<IactEstimate> {
    if !(c > 0.0) {
        return Err(invalid("window constant must be positive"));
    }
    let rho = autocorrelation(series, max_lag.min(series.len().saturating_sub(1)).max(1))?;
    let mut tau = 1.0;
    for (m, r) in rho.iter().enumerate().skip(1) {
        tau += 2.0 * r;
        if m as f64 >= c * tau {
            return Ok(IactEstimate {
                tau,
                window: m,
                reliable: true,
            });
        }
    }
    Ok(IactEstimate {
        tau,
        window: rho.len() - 1,
        reliable: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EssEstimate {
    pub ess: f64,
    pub reliable: bool,
}

/// `n / τ̂`.
pub fn ess(series: &[f64]) -> Result<EssEstimate> {
    let t = iact(series)?;
    Ok(EssEstimate {
        ess: series.len() as f64 / t.tau,
        reliable: t.reliable,
    })
}

/// Monte Carlo standard error of the series mean, `sqrt(s² τ̂ / n)`.
pub fn mc_standard_error(series: &[f64]) -> Result<f64> {
    let t = iact(series)?;
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok((var * t.tau.max(1.0) / n).sqrt())
}

/// Speed-up of DA over MH: `(τ_ref / τ_da) / (ᾱ + t*/t)`.
pub fn speedup_factor(tau_ref: f64, tau_da: f64, alpha: f64, cost_ratio: f64) -> Result<f64> {
    if !(tau_ref > 0.0 && tau_da > 0.0) {
        return Err(invalid("IACTs must be positive"));
    }
    if !(alpha > 0.0) {
        return Err(invalid("stage-one acceptance rate must be positive"));
    }
    if !(cost_ratio >= 0.0) {
        return Err(invalid("cost ratio must be nonnegative"));
    }
    Ok(tau_ref / tau_da / (alpha + cost_ratio))
}

/// Table-style efficiency summary of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencySummary {
    /// Post-burn-in iterations summarized.
    pub samples: usize,
    /// IACT of the log-posterior trace.
    pub tau: Option<IactEstimate>,
    pub ess: Option<f64>,
    /// Stage-one (or plain MH) acceptance rate per attempted move.
    pub alpha: Option<f64>,
    /// Stage-two acceptance rate among stage-one accepts.
    pub beta: Option<f64>,
    /// Fine and coarse evaluations per iteration.
    pub fine_per_iter: f64,
    pub coarse_per_iter: f64,
    /// Per-parameter IACTs.
    pub parameter_tau: Vec<Option<IactEstimate>>,
}

impl EfficiencySummary {
    /// Speed-up over a reference run with IACT `tau_ref`, given the
    /// coarse-to-fine cost ratio `t*/t`.
    pub fn speedup_against(&self, tau_ref: f64, cost_ratio: f64) -> Option<f64> {
        let tau = self.tau?.tau;
        speedup_factor(tau_ref, tau, self.alpha?, cost_ratio).ok()
    }
}

/// Stage-wise rates over the records after the first `burn_in`, with IACTs
/// of the log-likelihood and of each parameter.
pub fn acceptance_summary(records: &[ChainRecord], burn_in: usize) -> Result<EfficiencySummary> {
    let kept = records.get(burn_in..).unwrap_or(&[]);
    if kept.is_empty() {
        return Err(invalid("no post-burn-in records to summarize"));
    }
    let mut attempts = 0u64;
    let mut acc1 = 0u64;
    let mut acc2 = 0u64;
    let mut has_stage2 = true;
    for r in kept {
        attempts += u64::from(r.attempts);
        acc1 += u64::from(r.acc1);
        match r.acc2 {
            Some(a) => acc2 += u64::from(a),
            None => has_stage2 = false,
        }
    }
    let alpha = (attempts > 0).then(|| acc1 as f64 / attempts as f64);
    let beta = (has_stage2 && acc1 > 0).then(|| acc2 as f64 / acc1 as f64);
    if has_stage2 && acc1 == 0 {
        log::warn!("no stage-one acceptances; stage-two rate undefined");
    }
    let first = burn_in.checked_sub(1).and_then(|i| records.get(i));
    let (f0, c0) = first.map_or((0, 0), |r| (r.n_fine, r.n_coarse));
    let last = kept.last().expect("nonempty");
    let n = kept.len();
    let lp: Vec<f64> = kept.iter().map(|r| r.log_like).collect();
    let tau = iact(&lp).ok();
    let d = last.x.len();
    let parameter_tau = (0..d)
        .map(|k| {
            let s: Vec<f64> = kept.iter().map(|r| r.x[k]).collect();
            iact(&s).ok()
        })
        .collect();
    Ok(EfficiencySummary {
        samples: n,
        tau,
        ess: tau.map(|t| n as f64 / t.tau),
        alpha,
        beta,
        fine_per_iter: (last.n_fine - f0) as f64 / n as f64,
        coarse_per_iter: (last.n_coarse - c0) as f64 / n as f64,
        parameter_tau,
    })
}

/// Running mean sampled every `stride` values.
pub fn running_mean(series: &[f64], stride: usize) -> Vec<(usize, f64)> {
    let stride = stride.max(1);
    let mut out = Vec::new();
    let mut sum = 0.0;
    for (i, v) in series.iter().enumerate() {
        sum += v;
        if (i + 1) % stride == 0 || i + 1 == series.len() {
            out.push((i + 1, sum / (i + 1) as f64));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` edges.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

/// Equal-width histogram over the sample range.
pub fn histogram(series: &[f64], bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(invalid("histogram needs at least one bin"));
    }
    if series.is_empty() {
        return Err(invalid("histogram of an empty series"));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("series"));
    }
    let lo = series.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut hi = series.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        hi = lo + 1.0;
    }
    let w = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|k| lo + w * k as f64).collect();
    let mut counts = vec![0u64; bins];
    for v in series {
        let k = (((v - lo) / w) as usize).min(bins - 1);
        counts[k] += 1;
    }
    Ok(Histogram { edges, counts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn direct_acf(x: &[f64], max_lag: usize) -> Vec<f64> {
        let n = x.len();
        let m = x.iter().sum::<f64>() / n as f64;
        let c0: f64 = x.iter().map(|v| (v - m) * (v - m)).sum();
        (0..=max_lag)
            .map(|k| (0..n - k).map(|i| (x[i] - m) * (x[i + k] - m)).sum::<f64>() / c0)
            .collect()
    }

    fn ar1(rho: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = stream(seed, 0);
        let mut x = 0.0;
        let s = (1.0 - rho * rho).sqrt();
        (0..n)
            .map(|_| {
                x = rho * x + s * rng.sample::<f64, _>(StandardNormal);
                x
            })
            .collect()
    }

    #[test]
    fn fft_acf_matches_direct_sum() {
        let x = ar1(0.7, 1000, 1);
        let a = autocorrelation(&x, 60).unwrap();
        let b = direct_acf(&x, 60);
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-12, "{p} vs {q}");
        }
    }

    #[test]
    fn alternating_series_has_lag_one_near_minus_one() {
        let x: Vec<f64> = (0..10_000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let r = autocorrelation(&x, 1).unwrap();
        assert!((r[1] + 1.0).abs() < 1e-3);
    }

    #[test]
    fn constant_series_is_an_error() {
        assert_eq!(autocorrelation(&[2.0; 10], 2), Err(Error::ZeroVariance));
    }

    #[test]
    fn ar1_half_has_tau_three() {
        let t = iact(&ar1(0.5, 200_000, 2)).unwrap();
        assert!(t.reliable && (t.tau - 3.0).abs() < 0.15, "{t:?}");
    }

    #[test]
    fn short_strongly_correlated_series_is_flagged() {
        let x = ar1(0.999, 200, 3);
        let t = iact(&x).unwrap();
        assert!(!t.reliable);
    }

    #[test]
    fn speedup_examples() {
        assert!((speedup_factor(169.0, 208.0, 0.13, 0.058).unwrap() - 4.3).abs() < 0.05);
        assert!((speedup_factor(169.0, 153.0, 0.13, 0.058).unwrap() - 5.9).abs() < 0.05);
        assert_eq!(speedup_factor(10.0, 10.0, 1.0, 0.0).unwrap(), 1.0);
        assert!(speedup_factor(0.0, 1.0, 0.1, 0.1).is_err());
    }

    #[test]
    fn histogram_counts_every_sample() {
        let x = ar1(0.3, 1234, 4);
        let h = histogram(&x, 17).unwrap();
        assert_eq!(h.counts.iter().sum::<u64>(), 1234);
        assert_eq!(h.edges.len(), 18);
    }

    #[test]
    fn running_mean_ends_at_full_mean() {
        let r = running_mean(&[1.0, 2.0, 3.0, 4.0, 5.0], 2);
        assert_eq!(r, vec![(2, 1.5), (4, 2.5), (5, 3.0)]);
    }
}
