//! Problem generators, baselines, metrics and sweeps.

pub mod baselines;
pub mod config;
pub mod quadratic;
pub mod robust_ho;
pub mod sweep;
