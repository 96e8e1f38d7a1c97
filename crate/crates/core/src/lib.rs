//! Distributed trilevel zeroth-order learning.
//!
//! A master and `N` workers solve a consensus trilevel problem using only
//! function values. The two lower levels are replaced by pools of quadratic
//! cuts built from smoothed finite differences of the lower-level residuals,
//! and the relaxed problem is solved by penalized zeroth-order descent.
//!
//! Modules:
//! - [`zo`]: Gaussian-smoothing gradient estimators.
//! - [`cuts`]: cut construction, evaluation, pools and pruning.
//! - [`phi`]: K-round distributed approximations of the residuals.
//! - [`penalty`]: the penalized objective, its gradient and step sizes.
//! - [`runtime`]: workers, master, transports and the communication ledger.
//! - [`diagnostics`]: containment and smoothing checks.
//! - [`experiments`]: quadratic and robust hyperparameter instances,
//!   baselines and sweeps.
//!
//! Runnable examples (`cargo run --release --example <name>`):
//! `zo_estimators`, `cut_generation`, `containment`, `quadratic_trilevel`,
//! `greybox`, `communication_ledger`, `socket_transport`,
//! `robust_hyperparameter`, `t1_sweep`.

pub mod cuts;
pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod layout;
pub mod penalty;
pub mod phi;
pub mod problem;
pub mod rng;
pub mod runtime;
pub mod zo;
