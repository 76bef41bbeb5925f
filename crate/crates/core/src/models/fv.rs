//! One-dimensional transient diffusion with zoned conductivity.
//!
//! Solves `∂u/∂t = ∂/∂s(κ(s) ∂u/∂s)` on `[0, L]` with `u(s, 0) = 0`, a
//! prescribed influx at `s = 0` and `u = 0` at `s = L`. The conductivity is
//! piecewise constant over `Z` equal zones, `κ = 10^{x_z}`. Space is
//! discretized by cell-centred finite volumes with harmonic-mean face
//! conductivities and time by implicit Euler. The fine and coarse models
//! differ only in cell count and step count.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, ForwardError, Result};
use crate::models::{generate_synthetic_data, SyntheticData};
use crate::target::{Bounds, ForwardModel, ForwardPair, NoiseModel, Posterior, Prior};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resolution {
    Fine,
    Coarse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FvSpec {
    /// Domain length.
    pub length: f64,
    pub zones: usize,
    pub fine_cells: usize,
    pub coarse_cells: usize,
    /// Simulated time span.
    pub horizon: f64,
    pub fine_steps: usize,
    pub coarse_steps: usize,
    /// Flux entering at `s = 0`.
    pub influx: f64,
    pub sensors: Vec<f64>,
    pub times: Vec<f64>,
    pub lower: f64,
    pub upper: f64,
    pub x_true: Vec<f64>,
    /// Observation noise as a fraction of the peak noise-free signal at `x_true`.
    pub noise_fraction: f64,
    /// Standard deviation of a zero-mean Gaussian prior per zone, truncated to the
    /// bounds. `None` gives the uniform prior on the bounds.
    pub prior_std: Option<f64>,
}

impl Default for FvSpec {
    fn default() -> Self {
        Self {
            length: 1.0,
            zones: 8,
            fine_cells: 256,
            coarse_cells: 16,
            horizon: 1.0,
            fine_steps: 100,
            coarse_steps: 20,
            influx: 1.0,
            sensors: vec![0.125, 0.3, 0.55, 0.8],
            times: (1..=10).map(|k| 0.1 * k as f64).collect(),
            lower: -2.0,
            upper: 2.0,
            x_true: vec![0.3, -0.2, 0.5, 0.1, -0.4, 0.2, 0.0, -0.3],
            noise_fraction: 0.05,
            prior_std: Some(0.5),
        }
    }
}

impl FvSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("length", self.length),
            ("horizon", self.horizon),
            ("noise_fraction", self.noise_fraction),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid(format!("fv.{name} must be positive and finite")));
            }
        }
        if let Some(s) = self.prior_std {
            if !(s > 0.0) || !s.is_finite() {
                return Err(invalid("fv.prior_std must be positive and finite"));
            }
        }
        if !self.influx.is_finite() {
            return Err(invalid("fv.influx must be finite"));
        }
        if self.zones == 0 || self.fine_steps == 0 || self.coarse_steps == 0 {
            return Err(invalid("fv zone and step counts must be positive"));
        }
        for (name, cells) in [("fine_cells", self.fine_cells), ("coarse_cells", self.coarse_cells)] {
            if cells == 0 || cells % self.zones != 0 {
                return Err(invalid(format!("fv.{name} must be a positive multiple of fv.zones")));
            }
        }
        if !self.fine_cells.is_multiple_of(self.coarse_cells) {
            return Err(invalid("fv.fine_cells must be divisible by fv.coarse_cells"));
        }
        if self.sensors.is_empty() || self.times.is_empty() {
            return Err(invalid("fv needs at least one sensor and one observation time"));
        }
        if self.sensors.iter().any(|s| !(*s > 0.0 && *s < self.length)) {
            return Err(invalid("fv sensors must lie strictly inside the domain"));
        }
        if self.times.iter().any(|t| !(*t > 0.0 && *t <= self.horizon)) {
            return Err(invalid("fv observation times must lie in (0, horizon]"));
        }
        if self.times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("fv observation times must be strictly increasing"));
        }
        if !(self.lower < self.upper) {
            return Err(invalid("fv.lower must be below fv.upper"));
        }
        if self.x_true.len() != self.zones {
            return Err(invalid("fv.x_true must have one entry per zone"));
        }
        if !self.bounds()?.contains(&self.x_true) {
            return Err(invalid("fv.x_true must lie within the bounds"));
        }
        Ok(())
    }

    pub fn bounds(&self) -> Result<Bounds> {
        Bounds::uniform(self.zones, self.lower, self.upper)
    }

    pub fn output_dim(&self) -> usize {
        self.sensors.len() * self.times.len()
    }

    pub fn cells(&self, resolution: Resolution) -> usize {
        match resolution {
            Resolution::Fine => self.fine_cells,
            Resolution::Coarse => self.coarse_cells,
        }
    }

    pub fn steps(&self, resolution: Resolution) -> usize {
        match resolution {
            Resolution::Fine => self.fine_steps,
            Resolution::Coarse => self.coarse_steps,
        }
    }

    pub fn pair(&self) -> Result<ForwardPair> {
        ForwardPair::new(
            Arc::new(FvModel::new(self.clone(), Resolution::Fine)?),
            Arc::new(FvModel::new(self.clone(), Resolution::Coarse)?),
        )
    }

    /// `noise_fraction` times the peak noise-free fine signal at `x_true`.
    pub fn noise_sigma(&self) -> Result<f64> {
        self.validate()?;
        let clean = fv_solve(self, &self.x_true, Resolution::Fine)?;
        Ok(self.noise_fraction * clean.iter().fold(0.0, |m, v| f64::max(m, v.abs())))
    }

    /// Fine-model data at `x_true` with noise from `seed`.
    pub fn synthetic_data(&self, seed: u64) -> Result<SyntheticData> {
        let fine = FvModel::new(self.clone(), Resolution::Fine)?;
        generate_synthetic_data(&fine, &self.x_true, self.noise_sigma()?, seed)
    }

    pub fn prior(&self) -> Result<Prior> {
        let bounds = self.bounds()?;
        Ok(match self.prior_std {
            None => Prior::Box(bounds),
            Some(s) => Prior::Gaussian {
                mean: vec![0.0; self.zones],
                variance: vec![s * s; self.zones],
                bounds,
            },
        })
    }

    /// Posterior with iid observation noise.
    pub fn posterior(&self, data: Vec<f64>) -> Result<Posterior> {
        Posterior::new(
            self.pair()?,
            NoiseModel::isotropic(self.output_dim(), self.noise_sigma()?)?,
            self.prior()?,
            data,
        )
    }

    /// Column labels for the output vector, time-major.
    pub fn output_labels(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.output_dim());
        for (k, t) in self.times.iter().enumerate() {
            for (j, s) in self.sensors.iter().enumerate() {
                out.push(format!("s{j}@{s}_t{k}@{t}"));
            }
        }
        out
    }
}

/// Right-hand boundary condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RightBoundary {
    Dirichlet(f64),
    Sealed,
}

/// A uniform cell-centred grid with per-cell conductivity.
#[derive(Debug, Clone)]
pub struct Grid {
    length: f64,
    kappa: Vec<f64>,
}

impl Grid {
    pub fn new(length: f64, kappa: Vec<f64>) -> Self {
        Self { length, kappa }
    }

    /// Grid of `cells` cells with zone conductivities `10^{x_z}`.
    pub fn zoned(length: f64, cells: usize, log10_kappa: &[f64]) -> Self {
        let zones = log10_kappa.len();
        let kappa = (0..cells)
            .map(|i| 10.0_f64.powf(log10_kappa[i * zones / cells]))
            .collect();
        Self { length, kappa }
    }

    pub fn cells(&self) -> usize {
        self.kappa.len()
    }

    pub fn spacing(&self) -> f64 {
        self.length / self.cells() as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.spacing()
    }

    /// Conductance `κ_{i+1/2}/Δs` of the face between cells `i` and `i+1`.
    fn face_conductance(&self, i: usize) -> f64 {
        let (a, b) = (self.kappa[i], self.kappa[i + 1]);
        2.0 * a * b / (a + b) / self.spacing()
    }

    /// Advances `u` by one implicit Euler step of length `dt`.
    pub fn step(
        &self,
        u: &mut [f64],
        dt: f64,
        influx: f64,
        right: RightBoundary,
    ) -> core::result::Result<(), String> {
        let n = self.cells();
        let ds = self.spacing();
        let cap = ds / dt;
        let mut lower = vec![0.0; n];
        let mut diag = vec![cap; n];
        let mut upper = vec![0.0; n];
        let mut rhs: Vec<f64> = u.iter().map(|v| cap * v).collect();
        for i in 0..n.saturating_sub(1) {
            let w = self.face_conductance(i);
            diag[i] += w;
            diag[i + 1] += w;
            upper[i] = -w;
            lower[i + 1] = -w;
        }
        rhs[0] += influx;
        if let RightBoundary::Dirichlet(value) = right {
            let w = 2.0 * self.kappa[n - 1] / ds;
            diag[n - 1] += w;
            rhs[n - 1] += w * value;
        }
        solve_tridiagonal(&lower, &diag, &upper, &mut rhs)?;
        u.copy_from_slice(&rhs);
        Ok(())
    }

    /// Piecewise-linear reconstruction of the cell values at `s`.
    pub fn sample(&self, u: &[f64], s: f64, influx: f64, right: RightBoundary) -> f64 {
        let n = self.cells();
        let first = self.center(0);
        let last = self.center(n - 1);
        if s <= first {
            // boundary flux fixes the slope between the wall and the first centre
            return u[0] + influx / self.kappa[0] * (first - s);
        }
        if s >= last {
            return match right {
                RightBoundary::Dirichlet(value) => {
                    let w = (s - last) / (self.length - last);
                    u[n - 1] + w * (value - u[n - 1])
                }
                RightBoundary::Sealed => u[n - 1],
            };
        }
        let pos = s / self.spacing() - 0.5;
        let i = (pos.floor() as usize).min(n - 2);
        let w = pos - i as f64;
        u[i] + w * (u[i + 1] - u[i])
    }

    /// `Σ u_i Δs`.
    pub fn mass(&self, u: &[f64]) -> f64 {
        u.iter().sum::<f64>() * self.spacing()
    }
}

/// Thomas algorithm. `lower[0]` and `upper[n-1]` are ignored.
fn solve_tridiagonal(
    lower: &[f64],
    diag: &[f64],
    upper: &[f64],
    rhs: &mut [f64],
) -> core::result::Result<(), String> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut beta = diag[0];
    if !(beta.abs() > 0.0) || !beta.is_finite() {
        return Err(format!("zero or non-finite pivot at row 0 ({beta})"));
    }
    rhs[0] /= beta;
    for i in 1..n {
        c[i - 1] = upper[i - 1] / beta;
        beta = diag[i] - lower[i] * c[i - 1];
        if !(beta.abs() > 0.0) || !beta.is_finite() {
            return Err(format!("zero or non-finite pivot at row {i} ({beta})"));
        }
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
    Ok(())
}

/// Runs the configured experiment at one resolution and returns the sensor
/// readings, time-major (`times.len()` blocks of `sensors.len()` values).
pub fn fv_solve(spec: &FvSpec, x: &[f64], resolution: Resolution) -> Result<Vec<f64>, ForwardError> {
    if x.len() != spec.zones {
        return Err(ForwardError::new(x, "wrong number of zone parameters"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(ForwardError::new(x, "non-finite zone parameter"));
    }
    let grid = Grid::zoned(spec.length, spec.cells(resolution), x);
    let right = RightBoundary::Dirichlet(0.0);
    let steps = spec.steps(resolution);
    let dt = spec.horizon / steps as f64;
    let mut u = vec![0.0; grid.cells()];
    let mut prev = u.clone();
    let mut out = Vec::with_capacity(spec.output_dim());
    let mut next_obs = 0;
    for k in 1..=steps {
        prev.copy_from_slice(&u);
        grid.step(&mut u, dt, spec.influx, right).map_err(|msg| {
            ForwardError::new(x, format!("linear solve failed at step {k} of {steps}: {msg}"))
        })?;
        let (t0, t1) = ((k - 1) as f64 * dt, k as f64 * dt);
        while next_obs < spec.times.len() && spec.times[next_obs] <= t1 * (1.0 + 1e-12) {
            let w = ((spec.times[next_obs] - t0) / dt).clamp(0.0, 1.0);
            for &s in &spec.sensors {
                let a = grid.sample(&prev, s, spec.influx, right);
                let b = grid.sample(&u, s, spec.influx, right);
                out.push(a + w * (b - a));
            }
            next_obs += 1;
        }
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(ForwardError::new(x, "solution contains non-finite values"));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct FvModel {
    spec: FvSpec,
    resolution: Resolution,
}

impl FvModel {
    pub fn new(spec: FvSpec, resolution: Resolution) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec, resolution })
    }

    pub fn spec(&self) -> &FvSpec {
        &self.spec
    }
}

impl ForwardModel for FvModel {
    fn input_dim(&self) -> usize {
        self.spec.zones
    }
    fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }
    fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>, ForwardError> {
        fv_solve(&self.spec, x, self.resolution)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_kappa_reaches_linear_steady_state() {
        let base = FvSpec::default();
        let kappa_log = 0.3;
        let spec = FvSpec {
            horizon: 50.0 * base.horizon,
            times: vec![50.0 * base.horizon],
            ..base
        };
        let x = vec![kappa_log; spec.zones];
        let kappa = 10.0_f64.powf(kappa_log);
        for res in [Resolution::Fine, Resolution::Coarse] {
            let out = fv_solve(&spec, &x, res).unwrap();
            for (j, s) in spec.sensors.iter().enumerate() {
                let want = spec.influx * (spec.length - s) / kappa;
                assert!(
                    (out[j] - want).abs() <= 1e-3 * want.abs(),
                    "{res:?} sensor {j}: {} vs {want}",
                    out[j]
                );
            }
        }
    }

    #[test]
    fn steady_state_scales_as_flux_over_kappa() {
        let base = FvSpec::default();
        let spec = FvSpec {
            horizon: 50.0 * base.horizon,
            times: vec![50.0 * base.horizon],
            ..base
        };
        let x = vec![0.1, -0.3, 0.4, 0.0, 0.2, -0.1, 0.3, -0.2];
        let a = fv_solve(&spec, &x, Resolution::Fine).unwrap();
        let doubled: Vec<f64> = x.iter().map(|v| v + 2.0_f64.log10()).collect();
        for (flux_factor, profile_factor) in [(2.0, 1.0), (0.5, 0.25)] {
            let s = FvSpec {
                influx: spec.influx * flux_factor,
                ..spec.clone()
            };
            let b = fv_solve(&s, &doubled, Resolution::Fine).unwrap();
            for (p, q) in a.iter().zip(&b) {
                let want = p * profile_factor;
                assert!((q - want).abs() <= 1e-9 * want.abs(), "{q} vs {want}");
            }
        }
    }

    #[test]
    fn sealed_grid_conserves_mass() {
        let grid = Grid::zoned(1.0, 64, &[0.5, -1.0, 1.0, 0.0]);
        let mut u: Vec<f64> = (0..64).map(|i| 1.0 + (i as f64 * 0.3).sin()).collect();
        let m0 = grid.mass(&u);
        for _ in 0..200 {
            grid.step(&mut u, 0.01, 0.0, RightBoundary::Sealed).unwrap();
        }
        assert!((grid.mass(&u) - m0).abs() < 1e-10 * m0.abs());
    }

    #[test]
    fn fine_and_coarse_differ_and_error_shrinks_with_refinement() {
        let spec = FvSpec::default();
        let x = spec.x_true.clone();
        let fine = fv_solve(&spec, &x, Resolution::Fine).unwrap();
        let mut last = f64::INFINITY;
        for (cells, steps) in [(16, 20), (64, 50), (128, 100)] {
            let s = FvSpec {
                coarse_cells: cells,
                coarse_steps: steps,
                ..spec.clone()
            };
            let c = fv_solve(&s, &x, Resolution::Coarse).unwrap();
            let err: f64 = fine
                .iter()
                .zip(&c)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!(err > 0.0);
            assert!(err < last, "error {err} did not shrink below {last}");
            last = err;
        }
    }

    #[test]
    fn output_layout_matches_spec() {
        let spec = FvSpec::default();
        let out = fv_solve(&spec, &spec.x_true, Resolution::Coarse).unwrap();
        assert_eq!(out.len(), 40);
        assert_eq!(spec.output_labels().len(), 40);
    }

    #[test]
    fn lipschitz_spot_check() {
        let spec = FvSpec::default();
        let x = spec.x_true.clone();
        let base = fv_solve(&spec, &x, Resolution::Fine).unwrap();
        for z in 0..spec.zones {
            let mut xp = x.clone();
            xp[z] += 1e-6;
            let p = fv_solve(&spec, &xp, Resolution::Fine).unwrap();
            let d = base
                .iter()
                .zip(&p)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(d < 1e-4, "zone {z}: change {d}");
        }
    }

    #[test]
    fn deterministic() {
        let spec = FvSpec::default();
        let a = fv_solve(&spec, &spec.x_true, Resolution::Fine).unwrap();
        let b = fv_solve(&spec, &spec.x_true, Resolution::Fine).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn validation_catches_bad_layouts() {
        let bad = FvSpec {
            coarse_cells: 12,
            ..FvSpec::default()
        };
        assert!(bad.validate().is_err());
        let bad = FvSpec {
            sensors: vec![0.0],
            ..FvSpec::default()
        };
        assert!(bad.validate().is_err());
    }
}
