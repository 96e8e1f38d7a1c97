//! Counting transmitted scalars and comparing with the closed-form total.
//!
//! cargo run --release --example communication_ledger

use dtzo::error::Result;
use dtzo::experiments::quadratic::gen_quadratic;
use dtzo::problem::Dims;
use dtzo::runtime::{run_algorithm, RunConfig};

fn main() -> Result<()> {
    let dims = Dims::new(3, 2, 1, 2)?;
    let problem = gen_quadratic(dims, 1)?.problem()?;
    let cfg = RunConfig::new(1, 10, 4, 2);
    let r = run_algorithm(&problem, &cfg)?;
    let l = &r.ledger;
    println!(
        "iteration phase:  {:4} scalars (C1 = {})",
        l.iteration.total(),
        r.expected.c1
    );
    println!(
        "cut-update phase: {:4} scalars (C2 = {})",
        l.cut_update.total(),
        r.expected.c2
    );
    println!(
        "up {} / down {} in {} messages",
        l.up_scalars, l.down_scalars, l.messages
    );
    println!("refresh events: {}", r.refreshes.len());
    assert_eq!(l.total(), r.expected.total);
    Ok(())
}
