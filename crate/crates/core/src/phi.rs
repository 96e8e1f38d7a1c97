//! Lower-level residuals `phi_in` and `phi_out`.
//!
//! The black-box estimators warm-start at the given point and run `K`
//! synchronous rounds of distributed zeroth-order descent on the lower level;
//! the residual is the squared norm of the displacement. The per-round worker
//! and master updates are public so the transported runtime executes exactly
//! the same arithmetic.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cuts::{Layer, QuadraticCut};
use crate::error::{check_len, DtzoError, Result};
use crate::layout::{unflatten_inner, unflatten_outer, InnerLayout};
use crate::penalty::{hinge_penalty_grad, PerWorker};
use crate::problem::{Dims, LowerLevelStructure, ObjectiveOracle, Problem};
use crate::rng::{Purpose, RngStream, Role};
use crate::zo::two_point_with_base;

/// A residual evaluated at a point of its layer's cut space.
pub trait PhiEstimator: Sync {
    fn eval(&self, v: &[f64]) -> Result<f64>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhiConfig {
    /// Rounds `K` per evaluation. `None` uses the cut cadence.
    #[serde(default)]
    pub rounds: Option<usize>,
    pub eta_x: f64,
    pub eta_z: f64,
    /// Proximity weights `gamma_j` of the third-level procedure.
    pub gamma: PerWorker,
    /// Proximity weights of the second-level procedure.
    pub phi_prime: PerWorker,
    /// Inner-cut penalty weight `p_l` used by the second-level master step.
    pub inner_penalty: f64,
    /// Smoothing parameter of the per-round worker estimates.
    pub mu: f64,
    /// Common random numbers: every evaluation inside one cut generation
    /// replays the same directions.
    pub crn: bool,
}

impl Default for PhiConfig {
    fn default() -> Self {
        PhiConfig {
            rounds: None,
            eta_x: 0.1,
            eta_z: 0.1,
            gamma: PerWorker::Shared(1.0),
            phi_prime: PerWorker::Shared(1.0),
            inner_penalty: 1.0,
            mu: 1e-3,
            crn: true,
        }
    }
}

impl PhiConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.rounds == Some(0) {
            return Err(DtzoError::Config("phi rounds K must be >= 1".into()));
        }
        for (name, v) in [
            ("phi eta_x", self.eta_x),
            ("phi eta_z", self.eta_z),
            ("inner penalty", self.inner_penalty),
            ("phi mu", self.mu),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(DtzoError::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        self.gamma.validate("gamma_j", n)?;
        self.phi_prime.validate("phi'_j", n)
    }

    pub fn resolve_rounds(&self, cadence: usize) -> usize {
        self.rounds.unwrap_or(cadence).max(1)
    }
}

/// Names the direction streams of one cut-refresh event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhiStreams {
    pub seed: u64,
    pub event: u64,
}

impl PhiStreams {
    pub fn new(seed: u64, event: u64) -> Self {
        PhiStreams { seed, event }
    }

    /// Worker `j`'s stream for evaluation number `call` of this event. The
    /// unperturbed evaluation and every CRN evaluation use `call = 0`.
    pub fn worker(&self, layer: Layer, j: usize, call: u64) -> RngStream {
        let purpose = match layer {
            Layer::Inner => Purpose::PhiInner,
            Layer::Outer => Purpose::PhiOuter,
        };
        let base = RngStream::new(self.seed, Role::Worker, j as u64, purpose).substream(self.event);
        if call == 0 {
            base
        } else {
            base.substream(call)
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `x3 - eta_x (ghat + 2 gamma_j (x3 - z3))`, `ghat` the two-point estimate
/// of `f3_j(z1, z2, .)` at `x3`. Two evaluations.
#[allow(clippy::too_many_arguments)]
pub fn phi_in_worker_round(
    f3: &ObjectiveOracle,
    z1: &[f64],
    z2: &[f64],
    x3: &[f64],
    z3: &[f64],
    gamma_j: f64,
    cfg: &PhiConfig,
    stream: &mut RngStream,
) -> Result<Vec<f64>> {
    check_len("phi_in x3_j vs z3", z3.len(), x3.len())?;
    let u = stream.gaussian(x3.len())?;
    let mut f = |x: &[f64]| f3.eval(z1, z2, x);
    let base = f(x3)?;
    let g = two_point_with_base(&mut f, x3, base, cfg.mu, &u)?;
    Ok((0..x3.len())
        .map(|k| x3[k] - cfg.eta_x * (g[k] + 2.0 * gamma_j * (x3[k] - z3[k])))
        .collect())
}

/// `z3 - eta_z sum_j gamma_j (z3 - x3_j)`.
pub fn phi_in_master_round(
    z3: &[f64],
    x3_new: &[Vec<f64>],
    gamma: &PerWorker,
    eta_z: f64,
) -> Vec<f64> {
    let mut step = vec![0.0; z3.len()];
    for (j, x) in x3_new.iter().enumerate() {
        let g = gamma.get(j);
        for k in 0..z3.len() {
            step[k] += g * (z3[k] - x[k]);
        }
    }
    z3.iter().zip(step).map(|(z, s)| z - eta_z * s).collect()
}

/// `x2 - eta_x (ghat + 2 phi'_j (x2 - z2))`, `ghat` the two-point estimate of
/// `f2_j(z1, ., x3_j)` at `x2`. Two evaluations.
#[allow(clippy::too_many_arguments)]
pub fn phi_out_worker_round(
    f2: &ObjectiveOracle,
    z1: &[f64],
    x2: &[f64],
    x3: &[f64],
    z2: &[f64],
    phi_prime_j: f64,
    cfg: &PhiConfig,
    stream: &mut RngStream,
) -> Result<Vec<f64>> {
    check_len("phi_out x2_j vs z2", z2.len(), x2.len())?;
    let u = stream.gaussian(x2.len())?;
    let mut f = |x: &[f64]| f2.eval(z1, x, x3);
    let base = f(x2)?;
    let g = two_point_with_base(&mut f, x2, base, cfg.mu, &u)?;
    Ok((0..x2.len())
        .map(|k| x2[k] - cfg.eta_x * (g[k] + 2.0 * phi_prime_j * (x2[k] - z2[k])))
        .collect())
}

/// Inner-cut context for the second-level master step: the pool and an inner
/// cut-space point whose `z2'` slot is overwritten with the current `z2`.
#[derive(Debug, Clone, Copy)]
pub struct InnerCutContext<'a> {
    pub dims: Dims,
    pub cuts: &'a [QuadraticCut],
    pub v_inner: &'a [f64],
}

/// `z2 - eta_z (sum_j 2 phi'_j (z2 - x2_j) + grad_z2 sum_l p max(h_l^in - eps_l, 0)^2)`.
pub fn phi_out_master_round(
    z2: &[f64],
    x2_new: &[Vec<f64>],
    cfg: &PhiConfig,
    inner: Option<InnerCutContext<'_>>,
) -> Result<Vec<f64>> {
    let mut step = vec![0.0; z2.len()];
    for (j, x) in x2_new.iter().enumerate() {
        let w = cfg.phi_prime.get(j);
        for k in 0..z2.len() {
            step[k] += 2.0 * w * (z2[k] - x[k]);
        }
    }
    if let Some(ctx) = inner {
        if !ctx.cuts.is_empty() {
            let l = InnerLayout::new(ctx.dims);
            let mut v = ctx.v_inner.to_vec();
            check_len("inner context point", l.len(), v.len())?;
            v[l.z2()].copy_from_slice(z2);
            let g = hinge_penalty_grad(ctx.cuts, &v, |_| cfg.inner_penalty)?;
            for (s, gk) in step.iter_mut().zip(&g[l.z2()]) {
                *s += gk;
            }
        }
    }
    Ok(z2
        .iter()
        .zip(step)
        .map(|(z, s)| z - cfg.eta_z * s)
        .collect())
}

/// Terminal iterate of a `K`-round procedure and the squared displacement.
#[derive(Debug, Clone, PartialEq)]
pub struct KStepOutcome {
    pub phi: f64,
    pub x: Vec<Vec<f64>>,
    pub z: Vec<f64>,
}

/// `K` rounds of the third-level procedure from `(start_x3, start_z3)` with
/// `z1, z2` held fixed. Worker `j` draws from `streams[j]`.
#[allow(clippy::too_many_arguments)]
pub fn phi_in_kstep(
    z1: &[f64],
    z2: &[f64],
    start_x3: &[Vec<f64>],
    start_z3: &[f64],
    oracles_f3: &[ObjectiveOracle],
    cfg: &PhiConfig,
    rounds: usize,
    streams: &mut [RngStream],
) -> Result<KStepOutcome> {
    if rounds == 0 {
        return Err(DtzoError::Config("phi rounds K must be >= 1".into()));
    }
    let n = start_x3.len();
    check_len("phi_in oracles", n, oracles_f3.len())?;
    check_len("phi_in streams", n, streams.len())?;
    let mut x = start_x3.to_vec();
    let mut z = start_z3.to_vec();
    for _ in 0..rounds {
        for j in 0..n {
            x[j] = phi_in_worker_round(
                &oracles_f3[j],
                z1,
                z2,
                &x[j],
                &z,
                cfg.gamma.get(j),
                cfg,
                &mut streams[j],
            )?;
        }
        z = phi_in_master_round(&z, &x, &cfg.gamma, cfg.eta_z);
    }
    let phi = x
        .iter()
        .zip(start_x3)
        .map(|(a, b)| sq_dist(a, b))
        .sum::<f64>()
        + sq_dist(&z, start_z3);
    Ok(KStepOutcome { phi, x, z })
}

/// `K` rounds of the second-level procedure from `(start_x2, start_z2)` with
/// `z1` and the `x3_j` held fixed; the master step is penalized by the inner
/// cuts in `inner` (if any).
#[allow(clippy::too_many_arguments)]
pub fn phi_out_kstep(
    z1: &[f64],
    start_x2: &[Vec<f64>],
    x3: &[Vec<f64>],
    start_z2: &[f64],
    oracles_f2: &[ObjectiveOracle],
    inner: Option<InnerCutContext<'_>>,
    cfg: &PhiConfig,
    rounds: usize,
    streams: &mut [RngStream],
) -> Result<KStepOutcome> {
    if rounds == 0 {
        return Err(DtzoError::Config("phi rounds K must be >= 1".into()));
    }
    if let Some(ctx) = inner {
        if ctx.cuts.iter().any(|c| c.layer != Layer::Inner) {
            return Err(DtzoError::Config(
                "phi_out penalty pool must contain inner cuts only".into(),
            ));
        }
    }
    let n = start_x2.len();
    check_len("phi_out oracles", n, oracles_f2.len())?;
    check_len("phi_out x3 blocks", n, x3.len())?;
    check_len("phi_out streams", n, streams.len())?;
    let mut x = start_x2.to_vec();
    let mut z = start_z2.to_vec();
    for _ in 0..rounds {
        for j in 0..n {
            x[j] = phi_out_worker_round(
                &oracles_f2[j],
                z1,
                &x[j],
                &x3[j],
                &z,
                cfg.phi_prime.get(j),
                cfg,
                &mut streams[j],
            )?;
        }
        z = phi_out_master_round(&z, &x, cfg, inner)?;
    }
    let phi = x
        .iter()
        .zip(start_x2)
        .map(|(a, b)| sq_dist(a, b))
        .sum::<f64>()
        + sq_dist(&z, start_z2);
    Ok(KStepOutcome { phi, x, z })
}

/// Black-box `phi_in` on the inner cut space.
pub struct KStepPhiIn<'a> {
    pub problem: &'a Problem,
    pub cfg: &'a PhiConfig,
    pub rounds: usize,
    pub streams: PhiStreams,
    calls: AtomicU64,
}

impl<'a> KStepPhiIn<'a> {
    pub fn new(
        problem: &'a Problem,
        cfg: &'a PhiConfig,
        rounds: usize,
        streams: PhiStreams,
    ) -> Self {
        KStepPhiIn {
            problem,
            cfg,
            rounds,
            streams,
            calls: AtomicU64::new(0),
        }
    }

    pub fn run(&self, v: &[f64]) -> Result<KStepOutcome> {
        let dims = &self.problem.dims;
        let b = unflatten_inner(dims, v)?;
        let call = next_call(self.cfg.crn, &self.calls);
        let mut streams: Vec<RngStream> = (0..dims.n_workers)
            .map(|j| self.streams.worker(Layer::Inner, j, call))
            .collect();
        phi_in_kstep(
            &b.z1,
            &b.z2,
            &b.x3,
            &b.z3,
            &self.problem.f3,
            self.cfg,
            self.rounds,
            &mut streams,
        )
    }
}

fn next_call(crn: bool, calls: &AtomicU64) -> u64 {
    if crn {
        0
    } else {
        calls.fetch_add(1, Ordering::Relaxed) + 1
    }
}

impl PhiEstimator for KStepPhiIn<'_> {
    fn eval(&self, v: &[f64]) -> Result<f64> {
        Ok(self.run(v)?.phi)
    }
}

/// Black-box `phi_out` on the outer cut space, penalized by an inner pool.
pub struct KStepPhiOut<'a> {
    pub problem: &'a Problem,
    pub cfg: &'a PhiConfig,
    pub rounds: usize,
    pub streams: PhiStreams,
    pub inner_pool: &'a [QuadraticCut],
    calls: AtomicU64,
}

impl<'a> KStepPhiOut<'a> {
    pub fn new(
        problem: &'a Problem,
        cfg: &'a PhiConfig,
        rounds: usize,
        streams: PhiStreams,
        inner_pool: &'a [QuadraticCut],
    ) -> Self {
        KStepPhiOut {
            problem,
            cfg,
            rounds,
            streams,
            inner_pool,
            calls: AtomicU64::new(0),
        }
    }

    pub fn run(&self, v: &[f64]) -> Result<KStepOutcome> {
        let dims = &self.problem.dims;
        let b = unflatten_outer(dims, v)?;
        let call = next_call(self.cfg.crn, &self.calls);
        let mut streams: Vec<RngStream> = (0..dims.n_workers)
            .map(|j| self.streams.worker(Layer::Outer, j, call))
            .collect();
        let v_inner = inner_context_point(dims, &b.x3, &b.z1, &b.z2, &b.z3);
        let ctx = InnerCutContext {
            dims: *dims,
            cuts: self.inner_pool,
            v_inner: &v_inner,
        };
        phi_out_kstep(
            &b.z1,
            &b.x2,
            &b.x3,
            &b.z2,
            &self.problem.f2,
            Some(ctx),
            self.cfg,
            self.rounds,
            &mut streams,
        )
    }
}

/// `[x3_1..x3_N, z1, z2, z3]` as an owned inner-space vector.
pub fn inner_context_point(
    dims: &Dims,
    x3: &[Vec<f64>],
    z1: &[f64],
    z2: &[f64],
    z3: &[f64],
) -> Vec<f64> {
    let mut v = Vec::with_capacity(dims.inner_dim());
    for x in x3 {
        v.extend_from_slice(x);
    }
    v.extend_from_slice(z1);
    v.extend_from_slice(z2);
    v.extend_from_slice(z3);
    v
}

impl PhiEstimator for KStepPhiOut<'_> {
    fn eval(&self, v: &[f64]) -> Result<f64> {
        Ok(self.run(v)?.phi)
    }
}

/// Closed-form residual of a structured problem.
pub struct ExactPhi {
    pub structure: Arc<dyn LowerLevelStructure>,
    pub layer: Layer,
}

impl PhiEstimator for ExactPhi {
    fn eval(&self, v: &[f64]) -> Result<f64> {
        match self.layer {
            Layer::Inner => self.structure.phi_in(v),
            Layer::Outer => self.structure.phi_out(v),
        }
    }
}

/// Exact residual against the closed-form lower-level argmin. Problems
/// without closed-form structure give a mode error.
pub fn phi_exact_quadratic(problem: &Problem, layer: Layer, point: &[f64]) -> Result<f64> {
    ExactPhi {
        structure: problem.structure()?.clone(),
        layer,
    }
    .eval(point)
}

impl<F> PhiEstimator for F
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    fn eval(&self, v: &[f64]) -> Result<f64> {
        self(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{FnObjective, Level, Objective};

    fn constant_oracles(n: usize) -> Vec<ObjectiveOracle> {
        (0..n)
            .map(|j| {
                let f: Arc<dyn Objective> =
                    Arc::new(FnObjective(|_: &[f64], _: &[f64], _: &[f64]| 2.5));
                ObjectiveOracle::new(Level::Three, j, f)
            })
            .collect()
    }

    #[test]
    fn zero_rounds_rejected() {
        let o = constant_oracles(1);
        let cfg = PhiConfig::default();
        let mut s = vec![PhiStreams::new(0, 0).worker(Layer::Inner, 0, 0)];
        assert!(phi_in_kstep(&[0.0], &[0.0], &[vec![0.0]], &[0.0], &o, &cfg, 0, &mut s).is_err());
        let bad = PhiConfig {
            rounds: Some(0),
            ..PhiConfig::default()
        };
        assert!(bad.validate(1).is_err());
    }

    #[test]
    fn constant_objective_without_proximity_does_not_move() {
        let o = constant_oracles(2);
        let cfg = PhiConfig {
            gamma: PerWorker::Shared(0.0),
            ..PhiConfig::default()
        };
        let ps = PhiStreams::new(3, 1);
        let mut s: Vec<_> = (0..2).map(|j| ps.worker(Layer::Inner, j, 0)).collect();
        let out = phi_in_kstep(
            &[1.0],
            &[2.0],
            &[vec![0.3], vec![-1.0]],
            &[0.5],
            &o,
            &cfg,
            10,
            &mut s,
        )
        .unwrap();
        assert_eq!(out.phi, 0.0);
        assert_eq!(o[0].eval_count(), 20);
    }

    #[test]
    fn master_rounds() {
        let z = phi_in_master_round(
            &[1.0],
            &[vec![0.0], vec![2.0]],
            &PerWorker::Each(vec![1.0, 3.0]),
            0.1,
        );
        // 1 - 0.1 (1*(1-0) + 3*(1-2)) = 1.2
        assert!((z[0] - 1.2).abs() < 1e-15);
        let cfg = PhiConfig::default();
        let z = phi_out_master_round(&[1.0], &[vec![0.0]], &cfg, None).unwrap();
        assert!((z[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn crn_replays_and_fresh_draws_differ() {
        let dims = Dims::new(1, 1, 2, 1).unwrap();
        let f: Arc<dyn Objective> = Arc::new(FnObjective(|_: &[f64], _: &[f64], x: &[f64]| {
            x.iter().map(|v| (v - 1.0).powi(2)).sum::<f64>()
        }));
        let z: Arc<dyn Objective> = Arc::new(FnObjective(|_: &[f64], _: &[f64], _: &[f64]| 0.0));
        let p = Problem::new(
            dims,
            vec![z.clone()],
            vec![z],
            vec![f],
            crate::problem::SystemState::zeros(&dims),
        )
        .unwrap();
        let v = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let crn = PhiConfig::default();
        let est = KStepPhiIn::new(&p, &crn, 5, PhiStreams::new(1, 0));
        assert_eq!(est.eval(&v).unwrap(), est.eval(&v).unwrap());
        let fresh = PhiConfig {
            crn: false,
            ..PhiConfig::default()
        };
        let est = KStepPhiIn::new(&p, &fresh, 5, PhiStreams::new(1, 0));
        assert_ne!(est.eval(&v).unwrap(), est.eval(&v).unwrap());
    }
}
