//! Wall-clock accounting of forward-model calls.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use ada_core::target::ForwardModel;
use ada_core::ForwardError;

/// Cumulative call count and monotonic-clock time.
#[derive(Debug, Default)]
pub struct Timer {
    nanos: AtomicU64,
    calls: AtomicU64,
}

impl Timer {
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn seconds(&self) -> f64 {
        self.nanos.load(Ordering::Relaxed) as f64 * 1e-9
    }

    /// Mean seconds per call, if any call was made.
    pub fn per_call(&self) -> Option<f64> {
        let n = self.calls();
        (n > 0).then(|| self.seconds() / n as f64)
    }
}

pub struct TimedModel {
    inner: Arc<dyn ForwardModel>,
    timer: Arc<Timer>,
}

impl TimedModel {
    pub fn new(inner: Arc<dyn ForwardModel>, timer: Arc<Timer>) -> Self {
        Self { inner, timer }
    }
}

impl ForwardModel for TimedModel {
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    fn output_dim(&self) -> usize {
        self.inner.output_dim()
    }

    fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>, ForwardError> {
        let t = Instant::now();
        let out = self.inner.evaluate(x);
        let dt = t.elapsed().as_nanos().min(u128::from(u64::MAX)) as u64;
        self.timer.nanos.fetch_add(dt, Ordering::Relaxed);
        self.timer.calls.fetch_add(1, Ordering::Relaxed);
        out
    }
}

/// Coarse-to-fine cost ratio measured two ways.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostRatio {
    /// Mean coarse call time over mean fine call time.
    pub time: Option<f64>,
    /// Coarse calls per fine call.
    pub evals: Option<f64>,
}

pub fn cost_ratio(fine: &Timer, coarse: &Timer) -> CostRatio {
    let time = match (fine.per_call(), coarse.per_call()) {
        (Some(f), Some(c)) if f > 0.0 => Some(c / f),
        _ => None,
    };
    let evals = (fine.calls() > 0).then(|| coarse.calls() as f64 / fine.calls() as f64);
    CostRatio { time, evals }
}
