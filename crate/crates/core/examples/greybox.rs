//! Grey-box variants: exact level-1 gradients on the workers, and
//! first-order rho-cuts where the residual gradient is known.
//!
//! cargo run --release --example greybox

use dtzo::error::Result;
use dtzo::experiments::quadratic::{gen_quadratic_with, solution_estimate, QuadraticOptions};
use dtzo::problem::Dims;
use dtzo::runtime::{run_algorithm, GreyBox, RhoCuts, RunConfig};

fn main() -> Result<()> {
    let dims = Dims::new(1, 1, 1, 2)?;
    let inst = gen_quadratic_with(
        dims,
        4,
        QuadraticOptions {
            consistent: true,
            init_scale: 0.0,
        },
    )?;
    let problem = inst.problem()?;

    let variants = [
        ("black box", GreyBox::default()),
        (
            "level-1 gradients",
            GreyBox {
                level1_gradients: true,
                rho_cuts: None,
            },
        ),
        (
            "gradients + rho-cuts",
            GreyBox {
                level1_gradients: true,
                rho_cuts: Some(RhoCuts {
                    rho: 1.0,
                    radii: [1.0; 3],
                    inner: true,
                    outer: true,
                }),
            },
        ),
    ];
    for (name, gb) in variants {
        let mut cfg = RunConfig::new(4, 2000, 100, 10);
        cfg.greybox = gb;
        let r = run_algorithm(&problem, &cfg)?;
        let (a, b, c) = solution_estimate(&r.final_state);
        println!(
            "{name:22} distance {:.2e}  gap {:.2e}  f1 evals {:6}  cut-phase scalars {}",
            inst.distance_to_solution(&a, &b, &c),
            r.final_gap().unwrap_or(f64::NAN),
            r.eval_counts[0],
            r.ledger.cut_update.total()
        );
    }
    Ok(())
}
