//! The same run over in-process channels and over loopback TCP. Both give
//! identical reports.
//!
//! cargo run --release --example socket_transport

use dtzo::error::Result;
use dtzo::experiments::quadratic::gen_quadratic;
use dtzo::problem::Dims;
use dtzo::runtime::{run_algorithm, RunConfig, TransportKind};

fn main() -> Result<()> {
    let problem = gen_quadratic(Dims::new(2, 1, 1, 3)?, 9)?.problem()?;
    let mut cfg = RunConfig::new(9, 200, 40, 10);
    let local = run_algorithm(&problem, &cfg)?;
    cfg.transport = TransportKind::Socket;
    let tcp = run_algorithm(&problem, &cfg)?;

    println!(
        "in-process final F {:.6e}, {} messages",
        local.final_f.total, local.ledger.messages
    );
    println!(
        "socket     final F {:.6e}, {} messages",
        tcp.final_f.total, tcp.ledger.messages
    );
    println!("states identical: {}", local.final_state == tcp.final_state);
    println!("ledgers identical: {}", local.ledger == tcp.ledger);
    Ok(())
}
