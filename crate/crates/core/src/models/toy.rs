//! Seven-state discrete target for brute-force kernel checks.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteToy {
    /// Unnormalized exact target.
    pub target: Vec<f64>,
    /// Unnormalized approximate target.
    pub approx: Vec<f64>,
    /// Proposal probabilities; row deficits are proposals that fall off
    /// the ends of the state space.
    pub proposal: Matrix,
}

pub fn discrete_toy() -> DiscreteToy {
    let n = 7;
    DiscreteToy {
        target: vec![1.0, 2.0, 3.0, 4.0, 3.0, 2.0, 1.0],
        approx: vec![2.0, 2.0, 3.0, 3.0, 3.0, 2.0, 2.0],
        proposal: nearest_neighbour_proposal(n),
    }
}

/// Left or right with probability ½ each.
pub fn nearest_neighbour_proposal(n: usize) -> Matrix {
    let mut q = Matrix::zeros(n, n);
    for i in 0..n {
        if i > 0 {
            q[(i, i - 1)] = 0.5;
        }
        if i + 1 < n {
            q[(i, i + 1)] = 0.5;
        }
    }
    q
}
