//! Two-point and multi-point zeroth-order estimators, and a Monte-Carlo check
//! of the Gaussian smoothing of `|x|^2`.
//!
//! cargo run --release --example zo_estimators

use dtzo::error::Result;
use dtzo::rng::{Purpose, RngStream, Role};
use dtzo::zo::{multi_point_estimate, smoothed_value_mc, two_point_estimate, SmoothingConfig};

fn main() -> Result<()> {
    let w = [1.0, -2.0, 0.5, 3.0, -1.5];
    let linear = |x: &[f64]| Ok(x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>());
    let cfg = SmoothingConfig {
        mu: 1e-3,
        batch: 1,
        lipschitz: 1.0,
    };
    let mut dirs = RngStream::new(7, Role::Diagnostics, 0, Purpose::Trial);

    // a single estimate is unbiased but noisy
    let u = dirs.gaussian(5)?;
    println!(
        "one two-point estimate:   {:?}",
        round(&two_point_estimate(linear, &[0.0; 5], &cfg, &u)?)
    );

    let batch = SmoothingConfig {
        batch: 20_000,
        ..cfg
    };
    let est = multi_point_estimate(linear, &[0.0; 5], &batch, &mut dirs)?;
    println!("mean of {} estimates:  {:?}", batch.batch, round(&est.grad));
    println!(
        "standard errors:          {:?}",
        round(&est.stderr.unwrap())
    );
    println!("true gradient:            {w:?}");

    // F_mu(0) for |x|^2 in 3-D is mu^2 * 3
    let mu = 0.1;
    let sq = |x: &[f64]| Ok(x.iter().map(|v| v * v).sum::<f64>());
    let mc = smoothed_value_mc(sq, &[0.0; 3], mu, 10_000, &mut dirs)?;
    println!(
        "F_mu(0) ~ {:.5} +- {:.5} (exact {:.5})",
        mc.mean,
        mc.stderr.unwrap(),
        3.0 * mu * mu
    );
    Ok(())
}

fn round(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 1000.0).round() / 1000.0).collect()
}
