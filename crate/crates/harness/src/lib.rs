//! Experiment harness for the `bsvrb` solvers: configuration, runs, sweeps
//! and oracle checks. The `bsvrb` binary is a thin CLI over this crate.

pub mod checks;
pub mod config;
pub mod experiment;
pub mod stats;
pub mod sweep;
