//! Brute-force transition matrices on finite state spaces.
//!
//! These give exact answers to "is π stationary for this kernel" without
//! any sampling, and back the `verify` command.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::aem::{AemState, MeanMode};
use crate::error::{check_dim, invalid, Result};
use crate::linalg::Matrix;
use crate::models::toy::discrete_toy;
use crate::proposal::{AdaptConfig, ProposalAdaptState};
use crate::rng::{stream, ChainRng, AUX_STREAM_BASE};

/// Tolerance on row sums of an enumerated kernel.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Row-stochastic transition matrix with the distribution it should keep
/// invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteKernel {
    pub matrix: Matrix,
    /// Normalized target.
    pub target: Vec<f64>,
}

impl DiscreteKernel {
    pub fn new(matrix: Matrix, target: &[f64]) -> Result<Self> {
        let s = target.len();
        check_dim("kernel rows", s, matrix.rows())?;
        check_dim("kernel cols", s, matrix.cols())?;
        if matrix.as_slice().iter().any(|v| !(*v >= 0.0)) {
            return Err(invalid("kernel entries must be nonnegative"));
        }
        for i in 0..s {
            let r: f64 = matrix.row(i).iter().sum();
            if (r - 1.0).abs() > ROW_SUM_TOL {
                return Err(invalid(format!("kernel row {i} sums to {r}")));
            }
        }
        Ok(Self {
            matrix,
            target: normalize(target)?,
        })
    }

    pub fn states(&self) -> usize {
        self.target.len()
    }
}

fn normalize(p: &[f64]) -> Result<Vec<f64>> {
    if p.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(invalid("target table entries must be nonnegative and finite"));
    }
    let z: f64 = p.iter().sum();
    if !(z > 0.0) {
        return Err(invalid("target table has no mass"));
    }
    Ok(p.iter().map(|v| v / z).collect())
}

fn check_proposal(q: &Matrix, s: usize) -> Result<()> {
    check_dim("proposal rows", s, q.rows())?;
    check_dim("proposal cols", s, q.cols())?;
    for i in 0..s {
        let r: f64 = q.row(i).iter().sum();
        if q.row(i).iter().any(|v| !(*v >= 0.0)) || r > 1.0 + ROW_SUM_TOL {
            return Err(invalid(format!("proposal row {i} is not a subprobability")));
        }
    }
    Ok(())
}

/// Metropolis-Hastings acceptance probability `min{1, a q(y,x) / (b q(x,y))}`
/// with unsupported targets rejected.
fn mh_ratio(a_y: f64, a_x: f64, q_yx: f64, q_xy: f64) -> f64 {
    if a_y <= 0.0 || q_yx <= 0.0 {
        return 0.0;
    }
    f64::min(1.0, a_y * q_yx / (a_x * q_xy))
}

fn fill_diagonal(k: &mut Matrix) {
    for i in 0..k.rows() {
        let off: f64 = (0..k.cols()).filter(|&j| j != i).map(|j| k[(i, j)]).sum();
        k[(i, i)] = 1.0 - off;
    }
}

/// Plain MH kernel for target `pi` and proposal `q`.
pub fn enumerate_mh_kernel(pi: &[f64], q: &Matrix) -> Result<DiscreteKernel> {
    let s = pi.len();
    check_proposal(q, s)?;
    let mut k = Matrix::zeros(s, s);
    for x in 0..s {
        for y in (0..s).filter(|&y| y != x && q[(x, y)] > 0.0) {
            k[(x, y)] = q[(x, y)] * mh_ratio(pi[y], pi[x], q[(y, x)], q[(x, y)]);
        }
    }
    fill_diagonal(&mut k);
    DiscreteKernel::new(k, pi)
}

/// DA kernel with a possibly state-dependent approximation:
/// `approx(x, y)` is the unnormalized `π*_x(y)`.
pub fn enumerate_da_kernel_with<F>(pi: &[f64], approx: F, q: &Matrix) -> Result<DiscreteKernel>
where
    F: Fn(usize, usize) -> f64,
{
    da_kernel(pi, &approx, q, true)
}

/// DA kernel with a fixed approximate target `pi_star`.
pub fn enumerate_da_kernel(pi: &[f64], pi_star: &[f64], q: &Matrix) -> Result<DiscreteKernel> {
    check_dim("approximate target", pi.len(), pi_star.len())?;
    da_kernel(pi, &|_, y| pi_star[y], q, true)
}

/// The negative control: stage one only, stage two skipped.
pub fn enumerate_stage_one_kernel(pi: &[f64], pi_star: &[f64], q: &Matrix) -> Result<DiscreteKernel> {
    check_dim("approximate target", pi.len(), pi_star.len())?;
    da_kernel(pi, &|_, y| pi_star[y], q, false)
}

fn da_kernel(pi: &[f64], approx: &dyn Fn(usize, usize) -> f64, q: &Matrix, stage_two: bool) -> Result<DiscreteKernel> {
    let s = pi.len();
    check_proposal(q, s)?;
    let alpha = |x: usize, y: usize| mh_ratio(approx(x, y), approx(x, x), q[(y, x)], q[(x, y)]);
    let mut k = Matrix::zeros(s, s);
    for x in 0..s {
        for y in (0..s).filter(|&y| y != x && q[(x, y)] > 0.0) {
            let a_xy = alpha(x, y);
            if a_xy == 0.0 {
                continue;
            }
            let beta = if stage_two {
                let a_yx = alpha(y, x);
                if pi[y] <= 0.0 {
                    0.0
                } else {
                    f64::min(1.0, pi[y] * q[(y, x)] * a_yx / (pi[x] * q[(x, y)] * a_xy))
                }
            } else {
                1.0
            };
            k[(x, y)] = q[(x, y)] * a_xy * beta;
        }
    }
    fill_diagonal(&mut k);
    DiscreteKernel::new(k, pi)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StationarityReport {
    /// `‖πK − π‖_∞`.
    pub stationarity: f64,
    /// `max |π(x)K(x,y) − π(y)K(y,x)|`.
    pub detailed_balance: f64,
}

pub fn check_stationarity(k: &DiscreteKernel) -> StationarityReport {
    let s = k.states();
    let pi = &k.target;
    let mut stationarity: f64 = 0.0;
    for y in 0..s {
        let flow: f64 = (0..s).map(|x| pi[x] * k.matrix[(x, y)]).sum();
        stationarity = stationarity.max((flow - pi[y]).abs());
    }
    let mut detailed_balance: f64 = 0.0;
    for x in 0..s {
        for y in 0..s {
            let d = (pi[x] * k.matrix[(x, y)] - pi[y] * k.matrix[(y, x)]).abs();
            detailed_balance = detailed_balance.max(d);
        }
    }
    StationarityReport {
        stationarity,
        detailed_balance,
    }
}

/// `π*` table with entries log-uniform in `[0.1, 10]×` the target.
pub fn random_approx_table<R: Rng + ?Sized>(pi: &[f64], rng: &mut R) -> Vec<f64> {
    let ln10 = 10f64.ln();
    pi.iter()
        .map(|p| p * (rng.random_range(-ln10..ln10)).exp())
        .collect()
}

/// Worst residuals of DA kernels on the toy over `tables` random `π*`
/// tables, alternating state-independent and state-dependent tables.
pub fn stress_test(tables: usize, seed: u64) -> Result<StationarityReport> {
    let toy = discrete_toy();
    let mut rng = stream(seed, AUX_STREAM_BASE + 16);
    let mut worst = StationarityReport {
        stationarity: 0.0,
        detailed_balance: 0.0,
    };
    for t in 0..tables {
        let k = if t % 2 == 0 {
            let star = random_approx_table(&toy.target, &mut rng);
            enumerate_da_kernel(&toy.target, &star, &toy.proposal)?
        } else {
            let n = toy.target.len();
            let rows: Vec<Vec<f64>> = (0..n).map(|_| random_approx_table(&toy.target, &mut rng)).collect();
            enumerate_da_kernel_with(&toy.target, |x, y| rows[x][y], &toy.proposal)?
        };
        let r = check_stationarity(&k);
        worst.stationarity = worst.stationarity.max(r.stationarity);
        worst.detailed_balance = worst.detailed_balance.max(r.detailed_balance);
    }
    Ok(worst)
}

/// One line of a verification report.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    /// Passing means `value < tolerance`, or `value > tolerance` for
    /// expected-failure demonstrations.
    pub expect_violation: bool,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        if self.expect_violation {
            self.value > self.tolerance
        } else {
            self.value < self.tolerance
        }
    }
}

fn check(name: &str, value: f64, tolerance: f64) -> CheckResult {
    CheckResult {
        name: name.into(),
        value,
        tolerance,
        expect_violation: false,
    }
}

fn relative_gap(a: &Matrix, b: &Matrix) -> f64 {
    a.sub(b).map_or(f64::INFINITY, |d| d.max_abs() / b.max_abs().max(f64::MIN_POSITIVE))
}

fn batch_covariance(samples: &[Vec<f64>], centered: bool) -> (Vec<f64>, Matrix) {
    let n = samples.len();
    let d = samples[0].len();
    let mut mean = vec![0.0; d];
    if centered {
        for s in samples {
            for (m, v) in mean.iter_mut().zip(s) {
                *m += v / n as f64;
            }
        }
    }
    let mut c = Matrix::zeros(d, d);
    for s in samples {
        for i in 0..d {
            for k in 0..d {
                c[(i, k)] += (s[i] - mean[i]) * (s[k] - mean[k]);
            }
        }
    }
    let denom = if centered { (n - 1) as f64 } else { n as f64 };
    (mean, c.scaled(1.0 / denom))
}

fn random_vectors(rng: &mut ChainRng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            (0..d)
                .map(|k| rng.random_range(-1.0..1.0) * (1.0 + k as f64) + 0.01 * i as f64)
                .collect()
        })
        .collect()
}

/// Oracle checks run by the `verify` command: toy stationarity and detailed
/// balance, the stage-two negative control, the randomized stress test and
/// recursion/batch equivalence of the adaptive estimators.
pub fn verification_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let toy = discrete_toy();
    let mut out = Vec::new();

    let mh = check_stationarity(&enumerate_mh_kernel(&toy.target, &toy.proposal)?);
    out.push(check("mh kernel stationarity", mh.stationarity, 1e-14));
    out.push(check("mh kernel detailed balance", mh.detailed_balance, 1e-14));

    let da = check_stationarity(&enumerate_da_kernel(&toy.target, &toy.approx, &toy.proposal)?);
    out.push(check("da kernel stationarity", da.stationarity, 1e-12));
    out.push(check("da kernel detailed balance", da.detailed_balance, 1e-12));

    let neg = check_stationarity(&enumerate_stage_one_kernel(&toy.target, &toy.approx, &toy.proposal)?);
    out.push(CheckResult {
        name: "negative control: stage two removed (expected violation)".into(),
        value: neg.stationarity,
        tolerance: 1e-3,
        expect_violation: true,
    });

    let stress = stress_test(100, seed)?;
    out.push(check("randomized 100-table stationarity", stress.stationarity, 1e-12));
    out.push(check("randomized 100-table detailed balance", stress.detailed_balance, 1e-12));

    let mut rng = stream(seed, AUX_STREAM_BASE + 17);
    let xs = random_vectors(&mut rng, 1000, 4);
    let mut prop = ProposalAdaptState::am(4, AdaptConfig::default())?;
    for x in &xs {
        prop.update_running_cov(x)?;
    }
    let (_, batch) = batch_covariance(&xs, true);
    out.push(check(
        "proposal running covariance vs batch",
        relative_gap(prop.covariance(), &batch),
        1e-10,
    ));

    let bs = random_vectors(&mut rng, 500, 5);
    let noise = Matrix::identity(5);
    let mut aem = AemState::new(&noise, MeanMode::Free)?;
    for b in &bs {
        aem.update_posterior_aem(b)?;
    }
    let (mean, batch) = batch_covariance(&bs, true);
    let mean_gap = aem
        .mean()
        .iter()
        .zip(&mean)
        .map(|(a, b)| (a - b).abs() / b.abs().max(1e-300))
        .fold(0.0, f64::max);
    out.push(check("posterior error model mean vs batch", mean_gap, 1e-9));
    out.push(check(
        "posterior error model covariance vs batch",
        relative_gap(aem.covariance(), &batch),
        1e-9,
    ));

    let mut sd = AemState::new(&noise, MeanMode::PinnedToZero)?;
    for b in &bs {
        sd.update_statedep_cov(b)?;
    }
    let (_, second) = batch_covariance(&bs, false);
    out.push(check(
        "increment covariance vs batch second moment",
        relative_gap(sd.covariance(), &second),
        1e-9,
    ));
    Ok(out)
}
