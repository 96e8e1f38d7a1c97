//! Generating, checking and pruning zeroth-order cuts on a closed-form
//! quadratic instance, with the residual from the distributed K-round
//! procedure and from the closed form.
//!
//! cargo run --release --example cut_generation

use dtzo::cuts::{generate_cut_at, CutPool, Layer};
use dtzo::error::Result;
use dtzo::experiments::quadratic::{gen_quadratic_with, QuadraticOptions};
use dtzo::layout::{flatten_inner, flatten_outer};
use dtzo::phi::{ExactPhi, KStepPhiIn, PhiConfig, PhiStreams};
use dtzo::problem::Dims;
use dtzo::rng::{Purpose, RngStream, Role};
use dtzo::zo::SmoothingConfig;

fn main() -> Result<()> {
    let dims = Dims::new(1, 1, 1, 2)?;
    let inst = gen_quadratic_with(
        dims,
        3,
        QuadraticOptions {
            consistent: false,
            init_scale: 1.0,
        },
    )?;
    let problem = inst.problem()?;
    let state = problem.init.clone();
    let smoothing = SmoothingConfig::default();
    let eps = 1e-3;

    let v_in = flatten_inner(&dims, &state, &state.z2)?;
    let v_out = flatten_outer(&dims, &state)?;
    let structure = problem.structure()?.clone();
    let exact_in = ExactPhi {
        structure: structure.clone(),
        layer: Layer::Inner,
    };
    let exact_out = ExactPhi {
        structure,
        layer: Layer::Outer,
    };

    let phi_cfg = PhiConfig {
        rounds: Some(20),
        ..PhiConfig::default()
    };
    let kstep = KStepPhiIn::new(&problem, &phi_cfg, 20, PhiStreams::new(3, 0));
    let mut s = RngStream::new(3, Role::Master, 0, Purpose::InnerCutDirections);
    let approx = generate_cut_at(&dims, Layer::Inner, &v_in, &kstep, &smoothing, eps, &mut s)?;
    let exact = generate_cut_at(
        &dims,
        Layer::Inner,
        &v_in,
        &exact_in,
        &smoothing,
        eps,
        &mut s,
    )?;
    println!(
        "phi_in at the start: K-step {:.5}, closed form {:.5}",
        approx.phi_val, exact.phi_val
    );
    // at its own base point a cut evaluates to phi minus the smoothing offset
    println!("inner cut h(v_t) = {:.5}", exact.cut.eval(&v_in)?);

    let mut pool = CutPool::new();
    pool.add(exact.cut, 1);
    let outer = generate_cut_at(
        &dims,
        Layer::Outer,
        &v_out,
        &exact_out,
        &smoothing,
        eps,
        &mut s,
    )?;
    pool.add(outer.cut, 1);
    println!(
        "pool: {} inner, {} outer",
        pool.inner.len(),
        pool.outer.len()
    );

    // the lower-level solution satisfies every valid cut
    let (z1, z2, z3) = inst.solution.clone();
    let mut sol = problem.init.clone();
    for j in 0..dims.n_workers {
        sol.x1[j] = z1.clone();
        sol.x2[j] = z2.clone();
        sol.x3[j] = z3.clone();
    }
    sol.z1 = z1;
    sol.z2 = z2;
    sol.z3 = z3;
    let s_in = flatten_inner(&dims, &sol, &sol.z2)?;
    let s_out = flatten_outer(&dims, &sol)?;
    println!(
        "solution feasible: inner {}, outer {}",
        pool.feasible(Layer::Inner, &s_in)?,
        pool.feasible(Layer::Outer, &s_out)?
    );

    // pruning at the solution drops cuts that are slack there
    let out = pool.prune_inactive(&s_in, &s_out)?;
    println!("pruned {:?}, {} cuts remain", out, pool.len());
    Ok(())
}
