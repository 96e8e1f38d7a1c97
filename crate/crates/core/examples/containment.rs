//! Checking that generated cuts keep the lower-level solution set feasible.
//!
//! cargo run --release --example containment

use dtzo::cuts::Layer;
use dtzo::diagnostics::{test_containment, ContainmentOptions, ContainmentReport};
use dtzo::error::Result;
use dtzo::experiments::quadratic::gen_quadratic;
use dtzo::problem::Dims;
use dtzo::rng::{Purpose, RngStream, Role};

fn main() -> Result<()> {
    println!("dims,{}", ContainmentReport::CSV_HEADER);
    for (d, n) in [((1, 1, 1), 1), ((2, 2, 2), 1), ((2, 1, 1), 3)] {
        let problem = gen_quadratic(Dims::new(d.0, d.1, d.2, n)?, 0)?.problem()?;
        for layer in [Layer::Inner, Layer::Outer] {
            let s = RngStream::new(0, Role::Diagnostics, 0, Purpose::Trial);
            let r = test_containment(&problem, layer, 100, 256, &s, ContainmentOptions::default())?;
            println!("{}x{}x{}/N{n},{}", d.0, d.1, d.2, r.csv_row());
        }
    }
    Ok(())
}
