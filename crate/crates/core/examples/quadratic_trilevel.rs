//! End-to-end run on a quadratic trilevel instance with a known solution.
//!
//! cargo run --release --example quadratic_trilevel -- [seed]

use dtzo::error::Result;
use dtzo::experiments::quadratic::{gen_quadratic_with, solution_estimate, QuadraticOptions};
use dtzo::problem::Dims;
use dtzo::runtime::{run_algorithm, RunConfig};

fn main() -> Result<()> {
    let seed = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let dims = Dims::new(1, 1, 1, 1)?;
    let inst = gen_quadratic_with(
        dims,
        seed,
        QuadraticOptions {
            consistent: true,
            init_scale: 0.0,
        },
    )?;
    let problem = inst.problem()?;

    let mut cfg = RunConfig::new(seed, 5000, 100, 10);
    cfg.eps_stop = Some(1e-6);
    let report = run_algorithm(&problem, &cfg)?;

    for p in report.gap_trace.iter().step_by(500) {
        println!("t={:5}  gap={:.3e}", p.t, p.gap);
    }
    let (z1, x2, x3) = solution_estimate(&report.final_state);
    println!(
        "T(eps) = {:?} after {} iterations",
        report.t_eps, report.t_reached
    );
    println!("estimate {:?} {:?} {:?}", z1, x2, x3);
    println!(
        "solution {:?} {:?} {:?}",
        inst.solution.0, inst.solution.1, inst.solution.2
    );
    println!("distance {:.2e}", inst.distance_to_solution(&z1, &x2, &x3));
    println!(
        "cuts generated {}, kept {} inner / {} outer",
        report.cut_history.len(),
        report.final_pool.inner.len(),
        report.final_pool.outer.len()
    );
    Ok(())
}
