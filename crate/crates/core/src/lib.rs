//! Delayed-acceptance MCMC for Bayesian inverse problems with expensive
//! forward models.
//!
//! The crate provides Metropolis-Hastings, delayed acceptance (DA) and
//! adaptive delayed acceptance (ADA) kernels, five reduced-model
//! approximations of the posterior (including approximation error models
//! adapted over the posterior), adaptive random-walk proposals, efficiency
//! diagnostics, synthetic test problems and a brute-force kernel oracle.
//!
//! The crate is `no_std` and needs only `alloc`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod aem;
pub mod diagnostics;
pub mod error;
pub mod kernel;
pub mod linalg;
pub mod models;
pub mod oracle;
pub mod proposal;
pub mod rng;
pub mod target;

pub use error::{Error, ForwardError, Result};
