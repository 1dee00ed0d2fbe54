//! Finite-volume loop-ensemble Gibbs measures: configurations, the
//! Metropolis sampler, brute-force oracles, Monte Carlo kernel estimation,
//! and consistency checks.

pub mod brute;
pub mod chain;
pub mod checks;
pub mod config;
pub mod mc;
pub mod metropolis;
