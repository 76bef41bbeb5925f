//! Sampled MH/DA chains on the seven-state toy target, for checking the
//! enumerated kernels against simulation.

use ada_core::kernel::{ChainRecord, KernelKind};
use ada_core::models::DiscreteToy;
use ada_core::rng::ChainRng;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyChain {
    pub kernel: KernelKind,
    pub state: usize,
    pub iteration: u64,
    pub rng: ChainRng,
    pub n_fine: u64,
    pub n_coarse: u64,
}

impl ToyChain {
    /// MH evaluates π once at the start, DA evaluates π*.
    pub fn new(kernel: KernelKind, state: usize, rng: ChainRng) -> Self {
        let da = kernel != KernelKind::Mh;
        Self {
            kernel,
            state,
            iteration: 0,
            rng,
            n_fine: 1,
            n_coarse: u64::from(da),
        }
    }

    pub fn step(&mut self, toy: &DiscreteToy) -> ChainRecord {
        let x = self.state;
        let n = toy.target.len();
        // proposal mass that falls off the state space is a rejected move
        let u: f64 = self.rng.random();
        let mut acc = 0.0;
        let mut y = None;
        for j in 0..n {
            acc += toy.proposal[(x, j)];
            if u < acc {
                y = Some(j);
                break;
            }
        }
        let da = self.kernel != KernelKind::Mh;
        let mut acc1 = 0;
        let mut acc2 = 0;
        if let Some(y) = y {
            let (pi, ps) = (&toy.target, &toy.approx);
            if da {
                self.n_coarse += 1;
                if self.rng.random::<f64>() < (ps[y] / ps[x]).min(1.0) {
                    acc1 = 1;
                    self.n_fine += 1;
                    let beta = (pi[y] * ps[x]) / (pi[x] * ps[y]);
                    if self.rng.random::<f64>() < beta.min(1.0) {
                        acc2 = 1;
                        self.state = y;
                    }
                }
            } else {
                self.n_fine += 1;
                if self.rng.random::<f64>() < (pi[y] / pi[x]).min(1.0) {
                    acc1 = 1;
                    self.state = y;
                }
            }
        }
        self.iteration += 1;
        let lp = toy.target[self.state].ln();
        ChainRecord {
            iteration: self.iteration,
            x: vec![self.state as f64],
            log_post: lp,
            log_like: lp,
            acc1,
            acc2: da.then_some(acc2),
            attempts: 1,
            n_fine: self.n_fine,
            n_coarse: self.n_coarse,
            sigma: Vec::new(),
        }
    }
}
