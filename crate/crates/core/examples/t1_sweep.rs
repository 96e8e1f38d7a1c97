//! Sweeping the cut horizon T1 on the robust instance and writing CSV.
//!
//! cargo run --release --example t1_sweep -- [seeds]

use dtzo::error::Result;
use dtzo::experiments::config::ExperimentConfig;
use dtzo::experiments::sweep::{sweep, write_csv, SweepParam};
use dtzo::runtime::RunConfig;

fn main() -> Result<()> {
    let n: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(3);
    let mut run = RunConfig::new(0, 300, 0, 5);
    run.trace_every = 0;
    let base = ExperimentConfig::robust_ho(3, run);
    let seeds: Vec<u64> = (0..n).collect();
    let rows = sweep(SweepParam::T1, &[0.0, 50.0, 200.0], &base, &seeds)?;
    write_csv(&rows, std::io::stdout())?;
    for t1 in [0.0, 50.0, 200.0] {
        let f: Vec<f64> = rows
            .iter()
            .filter(|r| r.value == t1)
            .map(|r| r.final_f)
            .collect();
        eprintln!(
            "T1={t1:>3}: mean final F {:.5}",
            f.iter().sum::<f64>() / f.len() as f64
        );
    }
    Ok(())
}
