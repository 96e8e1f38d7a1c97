//! Robust hyperparameter optimization on synthetic blobs: the trilevel method
//! against the single-level and bilevel baselines.
//!
//! cargo run --release --example robust_hyperparameter -- [seed]

use dtzo::error::Result;
use dtzo::experiments::baselines::Method;
use dtzo::experiments::config::{metric_for, run_method};
use dtzo::experiments::robust_ho::gen_robust_ho;
use dtzo::runtime::RunConfig;

fn main() -> Result<()> {
    let seed = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let inst = gen_robust_ho(3, seed)?;
    let mut cfg = RunConfig::new(seed, 500, 200, 5);
    cfg.trace_every = 0;

    println!("method    clean    adv      avg      final_F   scalars");
    for method in [Method::Dtzo, Method::Bilevel, Method::Single] {
        let r = run_method(method, &inst, &cfg)?;
        let m = metric_for(method, &inst, &r)?;
        println!(
            "{:8}  {:.4}   {:.4}   {:.4}   {:.4}    {}",
            method.name(),
            m.clean_acc,
            m.adv_acc,
            m.avg,
            r.final_f.total,
            r.ledger.total()
        );
        if method == Method::Dtzo {
            println!("          regularizer x1 = {:.4}", r.final_state.z1[0]);
        }
    }
    Ok(())
}
