//! Exterior-penalty objective
//! `F = sum_j [f1_j(x1_j, x2_j, x3_j) + phi_j |x1_j - z1|^2] + o`,
//! `o = sum_l lambda_l max(h_l(v_out) - eps_l, 0)^2`, with analytic block
//! gradients, the stationarity gap and the step-size schedule.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cuts::QuadraticCut;
use crate::error::{check_len, DtzoError, Result};
use crate::layout::{flatten_outer, OuterLayout};
use crate::problem::{Dims, Problem, SystemState};
use crate::rng::RngStream;
use crate::zo::multi_point_with_base;

/// A weight that is either shared by all workers or given per worker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerWorker {
    Shared(f64),
    Each(Vec<f64>),
}

impl PerWorker {
    pub fn get(&self, j: usize) -> f64 {
        match self {
            PerWorker::Shared(v) => *v,
            PerWorker::Each(v) => v[j],
        }
    }

    pub fn validate(&self, what: &str, n: usize) -> Result<()> {
        let ok = match self {
            PerWorker::Shared(v) => *v > 0.0 && v.is_finite(),
            PerWorker::Each(v) => v.len() == n && v.iter().all(|x| *x > 0.0 && x.is_finite()),
        };
        if ok {
            Ok(())
        } else {
            Err(DtzoError::Config(format!(
                "{what} must be positive (one shared value or one per worker, N = {n})"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PenaltyConfig {
    /// Shared outer-cut penalty weight.
    pub lambda: f64,
    /// Per-cut overrides keyed by cut id.
    #[serde(default)]
    pub lambda_overrides: BTreeMap<u64, f64>,
    /// Consensus weights `phi_j`.
    pub consensus: PerWorker,
    pub eps_in: f64,
    pub eps_out: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        PenaltyConfig {
            lambda: 1.0,
            lambda_overrides: BTreeMap::new(),
            consensus: PerWorker::Shared(1.0),
            eps_in: 1e-3,
            eps_out: 1e-3,
        }
    }
}

impl PenaltyConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.lambda > 0.0) || self.lambda_overrides.values().any(|l| !(*l > 0.0)) {
            return Err(DtzoError::Config("lambda must be > 0".into()));
        }
        self.consensus.validate("consensus weight phi_j", n)?;
        if !(self.eps_in >= 0.0 && self.eps_out >= 0.0) {
            return Err(DtzoError::Config("eps_in and eps_out must be >= 0".into()));
        }
        Ok(())
    }

    pub fn lambda_for(&self, id: u64) -> f64 {
        self.lambda_overrides
            .get(&id)
            .copied()
            .unwrap_or(self.lambda)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSizes {
    pub eta_x1: f64,
    pub eta_x2: f64,
    pub eta_x3: f64,
    pub eta_z1: f64,
    pub eta_z2: f64,
    pub eta_z3: f64,
}

impl StepSizes {
    pub fn uniform(eta: f64) -> Self {
        StepSizes {
            eta_x1: eta,
            eta_x2: eta,
            eta_x3: eta,
            eta_z1: eta,
            eta_z2: eta,
            eta_z3: eta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.eta_x1,
            self.eta_x2,
            self.eta_x3,
            self.eta_z1,
            self.eta_z2,
            self.eta_z3,
        ];
        if all.iter().all(|e| *e > 0.0 && e.is_finite()) {
            Ok(())
        } else {
            Err(DtzoError::Config(format!(
                "step sizes must be > 0: {self:?}"
            )))
        }
    }
}

/// `min{1/(8L(d_i+4)) for i = 1..3, 3/(2(L+1)), 1/sqrt(T - T1)}` for every block.
pub fn default_step_sizes(
    lipschitz: f64,
    dims: &Dims,
    horizon: usize,
    t1: usize,
) -> Result<StepSizes> {
    if horizon <= t1 {
        return Err(DtzoError::Config(format!(
            "step schedule needs T > T1, got T = {horizon}, T1 = {t1}"
        )));
    }
    if !(lipschitz > 0.0) {
        return Err(DtzoError::Config(format!("L must be > 0, got {lipschitz}")));
    }
    let l = lipschitz;
    let eta = [dims.d1, dims.d2, dims.d3]
        .iter()
        .map(|d| 1.0 / (8.0 * l * (*d as f64 + 4.0)))
        .chain([
            3.0 / (2.0 * (l + 1.0)),
            1.0 / ((horizon - t1) as f64).sqrt(),
        ])
        .fold(f64::INFINITY, f64::min);
    Ok(StepSizes::uniform(eta))
}

/// Largest smoothing parameter the step schedule allows: `1/sqrt(T - T1)`.
pub fn mu_schedule(horizon: usize, t1: usize) -> Result<f64> {
    if horizon <= t1 {
        return Err(DtzoError::Config("mu schedule needs T > T1".into()));
    }
    Ok(1.0 / ((horizon - t1) as f64).sqrt())
}

/// `sum_l w_l max(h_l(v) - eps_l, 0)^2` over `cuts`.
pub fn hinge_penalty(cuts: &[QuadraticCut], v: &[f64], weight: impl Fn(u64) -> f64) -> Result<f64> {
    let mut o = 0.0;
    for c in cuts {
        let ex = (c.eval(v)? - c.eps).max(0.0);
        o += weight(c.id) * ex * ex;
    }
    Ok(o)
}

/// Gradient of [`hinge_penalty`] in flattened coordinates:
/// `sum_l 2 w_l max(h_l - eps_l, 0) (2 a_l v + b_l)`.
pub fn hinge_penalty_grad(
    cuts: &[QuadraticCut],
    v: &[f64],
    weight: impl Fn(u64) -> f64,
) -> Result<Vec<f64>> {
    let mut g = vec![0.0; v.len()];
    for c in cuts {
        check_len("penalty point", c.dim(), v.len())?;
        let ex = (c.eval(v)? - c.eps).max(0.0);
        if ex == 0.0 {
            continue;
        }
        let s = 2.0 * weight(c.id) * ex;
        for k in 0..v.len() {
            g[k] += s * (2.0 * c.a[k] * v[k] + c.b[k]);
        }
    }
    Ok(g)
}

pub fn eval_o(
    dims: &Dims,
    outer: &[QuadraticCut],
    state: &SystemState,
    pcfg: &PenaltyConfig,
) -> Result<f64> {
    let v = flatten_outer(dims, state)?;
    hinge_penalty(outer, &v, |id| pcfg.lambda_for(id))
}

/// Block gradients of `o`. `o` does not depend on `x1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OGrad {
    pub x2: Vec<Vec<f64>>,
    pub x3: Vec<Vec<f64>>,
    pub z1: Vec<f64>,
    pub z2: Vec<f64>,
    pub z3: Vec<f64>,
}

impl OGrad {
    pub fn zeros(dims: &Dims) -> Self {
        OGrad {
            x2: vec![vec![0.0; dims.d2]; dims.n_workers],
            x3: vec![vec![0.0; dims.d3]; dims.n_workers],
            z1: vec![0.0; dims.d1],
            z2: vec![0.0; dims.d2],
            z3: vec![0.0; dims.d3],
        }
    }

    pub fn from_flat(dims: &Dims, g: &[f64]) -> Result<Self> {
        check_len("outer gradient", dims.outer_dim(), g.len())?;
        let l = OuterLayout::new(*dims);
        Ok(OGrad {
            x2: (0..dims.n_workers).map(|j| g[l.x2(j)].to_vec()).collect(),
            x3: (0..dims.n_workers).map(|j| g[l.x3(j)].to_vec()).collect(),
            z1: g[l.z1()].to_vec(),
            z2: g[l.z2()].to_vec(),
            z3: g[l.z3()].to_vec(),
        })
    }
}

pub fn grad_o(
    dims: &Dims,
    outer: &[QuadraticCut],
    state: &SystemState,
    pcfg: &PenaltyConfig,
) -> Result<OGrad> {
    let v = flatten_outer(dims, state)?;
    let g = hinge_penalty_grad(outer, &v, |id| pcfg.lambda_for(id))?;
    OGrad::from_flat(dims, &g)
}

/// `F` and its three parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FValue {
    pub total: f64,
    pub f1_sum: f64,
    pub consensus: f64,
    pub o: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Evaluates `F`; `N` oracle calls of `f1`.
pub fn eval_f(
    problem: &Problem,
    state: &SystemState,
    outer: &[QuadraticCut],
    pcfg: &PenaltyConfig,
) -> Result<FValue> {
    let dims = &problem.dims;
    state.check(dims)?;
    let mut f1_sum = 0.0;
    let mut consensus = 0.0;
    for j in 0..dims.n_workers {
        f1_sum += problem.f1[j].eval(&state.x1[j], &state.x2[j], &state.x3[j])?;
        consensus += pcfg.consensus.get(j) * sq_dist(&state.x1[j], &state.z1);
    }
    let o = eval_o(dims, outer, state, pcfg)?;
    Ok(FValue {
        total: f1_sum + consensus + o,
        f1_sum,
        consensus,
        o,
    })
}

/// All `3N + 3` block gradients of `F`.
#[derive(Debug, Clone, PartialEq)]
pub struct FGrad {
    pub x1: Vec<Vec<f64>>,
    pub x2: Vec<Vec<f64>>,
    pub x3: Vec<Vec<f64>>,
    pub z1: Vec<f64>,
    pub z2: Vec<f64>,
    pub z3: Vec<f64>,
}

impl FGrad {
    pub fn sq_norm(&self) -> f64 {
        let blocks = self.x1.iter().chain(&self.x2).chain(&self.x3);
        blocks
            .chain([&self.z1, &self.z2, &self.z3])
            .map(|b| b.iter().map(|x| x * x).sum::<f64>())
            .sum()
    }
}

fn assemble_grad(
    dims: &Dims,
    state: &SystemState,
    f1_grads: Vec<[Vec<f64>; 3]>,
    og: OGrad,
    pcfg: &PenaltyConfig,
) -> FGrad {
    let n = dims.n_workers;
    let mut x1 = Vec::with_capacity(n);
    let mut x2 = Vec::with_capacity(n);
    let mut x3 = Vec::with_capacity(n);
    let mut z1 = og.z1.clone();
    for (j, [g1, g2, g3]) in f1_grads.into_iter().enumerate() {
        let p = pcfg.consensus.get(j);
        x1.push(
            g1.iter()
                .zip(state.x1[j].iter().zip(&state.z1))
                .map(|(g, (x, z))| g + 2.0 * p * (x - z))
                .collect(),
        );
        for (k, zk) in z1.iter_mut().enumerate() {
            *zk += 2.0 * p * (state.z1[k] - state.x1[j][k]);
        }
        x2.push(g2.iter().zip(&og.x2[j]).map(|(a, b)| a + b).collect());
        x3.push(g3.iter().zip(&og.x3[j]).map(|(a, b)| a + b).collect());
    }
    FGrad {
        x1,
        x2,
        x3,
        z1,
        z2: og.z2,
        z3: og.z3,
    }
}

/// White-box gradient of `F`. Needs gradient oracles for every `f1_j`.
pub fn grad_f(
    problem: &Problem,
    state: &SystemState,
    outer: &[QuadraticCut],
    pcfg: &PenaltyConfig,
) -> Result<FGrad> {
    let dims = &problem.dims;
    state.check(dims)?;
    let mut f1g = Vec::with_capacity(dims.n_workers);
    for j in 0..dims.n_workers {
        let g = problem.f1[j].gradient(&state.x1[j], &state.x2[j], &state.x3[j])?;
        f1g.push([g.g1, g.g2, g.g3]);
    }
    let og = grad_o(dims, outer, state, pcfg)?;
    Ok(assemble_grad(dims, state, f1g, og, pcfg))
}

/// `|G^t|^2`, the sum of squared block gradients of `F` (white-box).
pub fn stationarity_gap(
    problem: &Problem,
    state: &SystemState,
    outer: &[QuadraticCut],
    pcfg: &PenaltyConfig,
) -> Result<f64> {
    Ok(grad_f(problem, state, outer, pcfg)?.sq_norm())
}

/// Black-box gap estimate with its delta-method standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZoGap {
    pub gap: f64,
    pub stderr: f64,
}

/// Gap with every `grad f1_j` replaced by a `batch`-direction multi-point
/// estimate (`batch + 1` evaluations of each `f1_j`). Diagnostic only.
#[allow(clippy::too_many_arguments)]
pub fn stationarity_gap_zo(
    problem: &Problem,
    state: &SystemState,
    outer: &[QuadraticCut],
    pcfg: &PenaltyConfig,
    mu: f64,
    batch: usize,
    stream: &mut RngStream,
) -> Result<ZoGap> {
    let dims = problem.dims;
    state.check(&dims)?;
    let (d1, d2) = (dims.d1, dims.d2);
    let mut f1g = Vec::with_capacity(dims.n_workers);
    let mut se = Vec::with_capacity(dims.n_workers);
    for j in 0..dims.n_workers {
        let x = [state.x1[j].as_slice(), &state.x2[j], &state.x3[j]].concat();
        let oracle = &problem.f1[j];
        let mut f = |v: &[f64]| oracle.eval(&v[..d1], &v[d1..d1 + d2], &v[d1 + d2..]);
        let fx = f(&x)?;
        let mut sub = stream.substream(j as u64);
        let est = multi_point_with_base(&mut f, &x, fx, mu, batch, &mut sub)?;
        let g = est.grad;
        f1g.push([
            g[..d1].to_vec(),
            g[d1..d1 + d2].to_vec(),
            g[d1 + d2..].to_vec(),
        ]);
        se.push(est.stderr.unwrap_or_else(|| vec![0.0; x.len()]));
    }
    let og = grad_o(&dims, outer, state, pcfg)?;
    let fg = assemble_grad(&dims, state, f1g, og, pcfg);
    // Only the f1 parts are random; propagate their errors through |g|^2.
    let mut var = 0.0;
    for j in 0..dims.n_workers {
        let blocks = fg.x1[j].iter().chain(&fg.x2[j]).chain(&fg.x3[j]);
        for (g, s) in blocks.zip(&se[j]) {
            var += (2.0 * g * s).powi(2);
        }
    }
    Ok(ZoGap {
        gap: fg.sq_norm(),
        stderr: var.sqrt(),
    })
}

/// Workers whose consensus distance exceeds `N C / phi_j`, with `C` the given
/// bound on `|f1_j|` (typically twice the largest value observed so far).
pub fn consensus_bound_violations(
    state: &SystemState,
    c_bound: f64,
    pcfg: &PenaltyConfig,
) -> Vec<usize> {
    let n = state.x1.len() as f64;
    (0..state.x1.len())
        .filter(|&j| sq_dist(&state.x1[j], &state.z1) > n * c_bound / pcfg.consensus.get(j))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cuts::{build_cut_from_linearization, Layer};
    use crate::problem::Objective;
    use std::sync::Arc;

    fn one_d_cut(eps: f64) -> QuadraticCut {
        build_cut_from_linearization(4.0, &[4.0], &[2.0], 1.0, 0.0, 1.0, eps, Layer::Outer).unwrap()
    }

    #[test]
    fn step_schedule_examples() {
        let d = Dims::new(4, 4, 4, 1).unwrap();
        let s = default_step_sizes(1.0, &d, 1_000_000 + 5, 5).unwrap();
        assert!((s.eta_x1 - 1e-3).abs() < 1e-15);
        let d = Dims::new(1, 1, 1, 1).unwrap();
        let s = default_step_sizes(1.0, &d, 10, 6).unwrap();
        assert_eq!(s.eta_z3, 1.0 / 40.0);
        assert!(default_step_sizes(1.0, &d, 5, 5).is_err());
        let big = default_step_sizes(100.0, &d, 10, 6).unwrap();
        assert_eq!(big.eta_x2, 1.0 / (800.0 * 5.0));
    }

    #[test]
    fn o_examples() {
        let p = PenaltyConfig {
            lambda: 2.0,
            eps_out: 1.0,
            ..Default::default()
        };
        // h = 3 at v: shift e so that h(2) = 3
        let mut c = one_d_cut(1.0);
        c.e -= 1.0;
        assert_eq!(
            hinge_penalty(&[c.clone()], &[2.0], |id| p.lambda_for(id)).unwrap(),
            8.0
        );
        assert_eq!(hinge_penalty(&[], &[2.0], |_| 1.0).unwrap(), 0.0);
        let mut at = c.clone();
        at.e -= 2.0;
        assert_eq!(hinge_penalty(&[at], &[2.0], |_| 2.0).unwrap(), 0.0);
    }

    #[test]
    fn grad_example() {
        // h(3) = -9 + 24 - 8 = 7, dh/dv = -6 + 8 = 2 -> 2*7*2
        let g = hinge_penalty_grad(&[one_d_cut(0.0)], &[3.0], |_| 1.0).unwrap();
        assert_eq!(g, vec![28.0]);
    }

    fn zero_problem(n: usize) -> Problem {
        let dims = Dims::new(1, 1, 1, n).unwrap();
        let mk = || -> Vec<Arc<dyn Objective>> {
            (0..n)
                .map(|_| {
                    Arc::new(crate::problem::FnObjective(
                        |_: &[f64], _: &[f64], _: &[f64]| 0.0,
                    )) as Arc<dyn Objective>
                })
                .collect()
        };
        Problem::new(dims, mk(), mk(), mk(), SystemState::zeros(&dims)).unwrap()
    }

    #[test]
    fn f_consensus_example_and_gap_mode_error() {
        let p = zero_problem(1);
        let mut s = SystemState::zeros(&p.dims);
        s.x1[0] = vec![1.0];
        let cfg = PenaltyConfig {
            consensus: PerWorker::Shared(3.0),
            ..Default::default()
        };
        assert_eq!(eval_f(&p, &s, &[], &cfg).unwrap().total, 3.0);
        assert!(matches!(
            stationarity_gap(&p, &s, &[], &cfg),
            Err(DtzoError::Mode(_))
        ));
    }

    struct Zero;
    impl Objective for Zero {
        fn value(&self, _: &[f64], _: &[f64], _: &[f64]) -> f64 {
            0.0
        }
        fn gradient(
            &self,
            a: &[f64],
            b: &[f64],
            c: &[f64],
        ) -> Option<crate::problem::BlockGradient> {
            Some(crate::problem::BlockGradient {
                g1: vec![0.0; a.len()],
                g2: vec![0.0; b.len()],
                g3: vec![0.0; c.len()],
            })
        }
    }

    #[test]
    fn gap_hand_example() {
        let dims = Dims::new(1, 1, 1, 1).unwrap();
        let z: Vec<Arc<dyn Objective>> = vec![Arc::new(Zero)];
        let p = Problem::new(dims, z.clone(), z.clone(), z, SystemState::zeros(&dims)).unwrap();
        let mut s = SystemState::zeros(&dims);
        s.x1[0] = vec![1.0];
        let cfg = PenaltyConfig::default();
        assert_eq!(stationarity_gap(&p, &s, &[], &cfg).unwrap(), 8.0);
    }
}
