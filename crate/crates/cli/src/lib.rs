//! Configuration-driven runner for the delayed-acceptance samplers in
//! `ada-core`: chain runs with checkpoint/resume, the approximation
//! benchmark, kernel verification and trace diagnostics.

pub mod benchmark;
pub mod config;
pub mod diagnose;
pub mod error;
pub mod problem;
pub mod run;
pub mod timing;
pub mod toy;
pub mod trace;
pub mod verify;

pub use error::{CliError, CliResult};
