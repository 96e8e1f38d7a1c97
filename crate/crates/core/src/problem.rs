//! Problem definition: dimensions, the distributed iterate and the per-worker
//! level objectives.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, DtzoError, Result};

/// Block dimensions and worker count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub d1: usize,
    pub d2: usize,
    pub d3: usize,
    pub n_workers: usize,
}

impl Dims {
    pub fn new(d1: usize, d2: usize, d3: usize, n_workers: usize) -> Result<Self> {
        let dims = Dims {
            d1,
            d2,
            d3,
            n_workers,
        };
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d1 == 0 || self.d2 == 0 || self.d3 == 0 || self.n_workers == 0 {
            return Err(DtzoError::Config(format!(
                "all dimensions and the worker count must be >= 1, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Length of `[x3_1..x3_N, z1, z2', z3]`.
    pub fn inner_dim(&self) -> usize {
        self.n_workers * self.d3 + self.d1 + self.d2 + self.d3
    }

    /// Length of `[x2_1..x2_N, x3_1..x3_N, z1, z2, z3]`.
    pub fn outer_dim(&self) -> usize {
        self.n_workers * (self.d2 + self.d3) + self.d1 + self.d2 + self.d3
    }

    /// `(d1 + d2 + (N+1) d3 + 3)^3`, the dimension factor of the inner cut constant.
    pub fn inner_poly_dim(&self) -> f64 {
        let n = self.n_workers as f64;
        (self.d1 as f64 + self.d2 as f64 + (n + 1.0) * self.d3 as f64 + 3.0).powi(3)
    }

    /// `(d1 + (N+1)(d2 + d3) + 3)^3`.
    pub fn outer_poly_dim(&self) -> f64 {
        let n = self.n_workers as f64;
        (self.d1 as f64 + (n + 1.0) * (self.d2 + self.d3) as f64 + 3.0).powi(3)
    }

    pub fn block(&self, level: Level) -> usize {
        match level {
            Level::One => self.d1,
            Level::Two => self.d2,
            Level::Three => self.d3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Level {
    One,
    Two,
    Three,
}

/// Every worker-local block and every master consensus block at iteration `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub x1: Vec<Vec<f64>>,
    pub x2: Vec<Vec<f64>>,
    pub x3: Vec<Vec<f64>>,
    pub z1: Vec<f64>,
    pub z2: Vec<f64>,
    pub z3: Vec<f64>,
    pub t: usize,
}

impl SystemState {
    pub fn zeros(dims: &Dims) -> Self {
        let n = dims.n_workers;
        SystemState {
            x1: vec![vec![0.0; dims.d1]; n],
            x2: vec![vec![0.0; dims.d2]; n],
            x3: vec![vec![0.0; dims.d3]; n],
            z1: vec![0.0; dims.d1],
            z2: vec![0.0; dims.d2],
            z3: vec![0.0; dims.d3],
            t: 0,
        }
    }

    /// A state where every worker copy equals the consensus block.
    pub fn consensus(dims: &Dims, z1: &[f64], z2: &[f64], z3: &[f64]) -> Result<Self> {
        check_len("z1", dims.d1, z1.len())?;
        check_len("z2", dims.d2, z2.len())?;
        check_len("z3", dims.d3, z3.len())?;
        let n = dims.n_workers;
        Ok(SystemState {
            x1: vec![z1.to_vec(); n],
            x2: vec![z2.to_vec(); n],
            x3: vec![z3.to_vec(); n],
            z1: z1.to_vec(),
            z2: z2.to_vec(),
            z3: z3.to_vec(),
            t: 0,
        })
    }

    pub fn check(&self, dims: &Dims) -> Result<()> {
        let n = dims.n_workers;
        check_len("x1 workers", n, self.x1.len())?;
        check_len("x2 workers", n, self.x2.len())?;
        check_len("x3 workers", n, self.x3.len())?;
        for j in 0..n {
            check_len("x1_j", dims.d1, self.x1[j].len())?;
            check_len("x2_j", dims.d2, self.x2[j].len())?;
            check_len("x3_j", dims.d3, self.x3[j].len())?;
        }
        check_len("z1", dims.d1, self.z1.len())?;
        check_len("z2", dims.d2, self.z2.len())?;
        check_len("z3", dims.d3, self.z3.len())?;
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        let blocks = self.x1.iter().chain(&self.x2).chain(&self.x3);
        blocks
            .chain([&self.z1, &self.z2, &self.z3])
            .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Gradient of a level objective split into its three argument blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockGradient {
    pub g1: Vec<f64>,
    pub g2: Vec<f64>,
    pub g3: Vec<f64>,
}

/// A level objective `f(x1, x2, x3)`. Implementations must be deterministic.
pub trait Objective: Send + Sync {
    fn value(&self, x1: &[f64], x2: &[f64], x3: &[f64]) -> f64;

    /// White-box gradient, if the objective exposes one.
    fn gradient(&self, _x1: &[f64], _x2: &[f64], _x3: &[f64]) -> Option<BlockGradient> {
        None
    }
}

/// Closure-backed objective for quick experiments.
pub struct FnObjective<F>(pub F);

impl<F> Objective for FnObjective<F>
where
    F: Fn(&[f64], &[f64], &[f64]) -> f64 + Send + Sync,
{
    fn value(&self, x1: &[f64], x2: &[f64], x3: &[f64]) -> f64 {
        (self.0)(x1, x2, x3)
    }
}

/// Black-box evaluator for `f_{i,j}` that counts every call.
pub struct ObjectiveOracle {
    level: Level,
    worker: usize,
    f: Arc<dyn Objective>,
    evals: AtomicU64,
    grad_evals: AtomicU64,
}

impl fmt::Debug for ObjectiveOracle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ObjectiveOracle")
            .field("level", &self.level)
            .field("worker", &self.worker)
            .field("evals", &self.eval_count())
            .finish()
    }
}

impl ObjectiveOracle {
    pub fn new(level: Level, worker: usize, f: Arc<dyn Objective>) -> Self {
        ObjectiveOracle {
            level,
            worker,
            f,
            evals: AtomicU64::new(0),
            grad_evals: AtomicU64::new(0),
        }
    }

    pub fn level(&self) -> Level {
        self.level
    }

    pub fn worker(&self) -> usize {
        self.worker
    }

    pub fn eval_count(&self) -> u64 {
        self.evals.load(Ordering::Relaxed)
    }

    pub fn grad_count(&self) -> u64 {
        self.grad_evals.load(Ordering::Relaxed)
    }

    pub fn reset_counts(&self) {
        self.evals.store(0, Ordering::Relaxed);
        self.grad_evals.store(0, Ordering::Relaxed);
    }

    /// Evaluates the objective. A non-finite value is an error carrying the
    /// query point `[x1; x2; x3]`.
    pub fn eval(&self, x1: &[f64], x2: &[f64], x3: &[f64]) -> Result<f64> {
        self.evals.fetch_add(1, Ordering::Relaxed);
        let v = self.f.value(x1, x2, x3);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(DtzoError::Evaluation {
                value: v,
                point: [x1, x2, x3].concat(),
            })
        }
    }

    pub fn has_gradient(&self, x1: &[f64], x2: &[f64], x3: &[f64]) -> bool {
        self.f.gradient(x1, x2, x3).is_some()
    }

    pub fn gradient(&self, x1: &[f64], x2: &[f64], x3: &[f64]) -> Result<BlockGradient> {
        self.grad_evals.fetch_add(1, Ordering::Relaxed);
        self.f.gradient(x1, x2, x3).ok_or_else(|| {
            DtzoError::Mode(format!(
                "level {:?} objective of worker {} has no gradient oracle",
                self.level, self.worker
            ))
        })
    }
}

/// Closed-form lower-level structure that some instances expose: exact
/// residuals, their gradients and a point on the feasible manifold.
///
/// Points are given in the flattened cut-space coordinates of the matching
/// layer (see [`crate::layout`]).
pub trait LowerLevelStructure: Send + Sync {
    fn phi_in(&self, v_inner: &[f64]) -> Result<f64>;
    fn phi_out(&self, v_outer: &[f64]) -> Result<f64>;
    fn grad_phi_in(&self, v_inner: &[f64]) -> Result<Vec<f64>>;
    fn grad_phi_out(&self, v_outer: &[f64]) -> Result<Vec<f64>>;
    /// The point with the same upper-level coordinates as `v_inner` whose
    /// third-level blocks sit at the exact third-level argmin.
    fn inner_feasible_point(&self, v_inner: &[f64]) -> Result<Vec<f64>>;
    /// As above for the outer layer: second-level blocks moved to the exact
    /// second-level argmin, everything else unchanged.
    fn outer_feasible_point(&self, v_outer: &[f64]) -> Result<Vec<f64>>;
    /// Lipschitz constants of the residual gradients.
    fn phi_lipschitz(&self) -> (f64, f64);
}

/// Per-worker oracles for all three levels plus an initial iterate.
pub struct Problem {
    pub dims: Dims,
    pub f1: Vec<ObjectiveOracle>,
    pub f2: Vec<ObjectiveOracle>,
    pub f3: Vec<ObjectiveOracle>,
    pub init: SystemState,
    pub structure: Option<Arc<dyn LowerLevelStructure>>,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("dims", &self.dims)
            .field("structured", &self.structure.is_some())
            .finish()
    }
}

impl Problem {
    pub fn new(
        dims: Dims,
        f1: Vec<Arc<dyn Objective>>,
        f2: Vec<Arc<dyn Objective>>,
        f3: Vec<Arc<dyn Objective>>,
        init: SystemState,
    ) -> Result<Self> {
        dims.validate()?;
        let n = dims.n_workers;
        check_len("f1 oracles", n, f1.len())?;
        check_len("f2 oracles", n, f2.len())?;
        check_len("f3 oracles", n, f3.len())?;
        init.check(&dims)?;
        let wrap = |level, fs: Vec<Arc<dyn Objective>>| {
            fs.into_iter()
                .enumerate()
                .map(|(j, f)| ObjectiveOracle::new(level, j, f))
                .collect()
        };
        Ok(Problem {
            dims,
            f1: wrap(Level::One, f1),
            f2: wrap(Level::Two, f2),
            f3: wrap(Level::Three, f3),
            init,
            structure: None,
        })
    }

    pub fn with_structure(mut self, s: Arc<dyn LowerLevelStructure>) -> Self {
        self.structure = Some(s);
        self
    }

    pub fn structure(&self) -> Result<&Arc<dyn LowerLevelStructure>> {
        self.structure
            .as_ref()
            .ok_or_else(|| DtzoError::Mode("problem exposes no closed-form lower levels".into()))
    }

    pub fn reset_counts(&self) {
        for o in self.f1.iter().chain(&self.f2).chain(&self.f3) {
            o.reset_counts();
        }
    }

    /// Total evaluations per level, summed over workers.
    pub fn eval_counts(&self) -> [u64; 3] {
        let sum = |os: &[ObjectiveOracle]| os.iter().map(|o| o.eval_count()).sum();
        [sum(&self.f1), sum(&self.f2), sum(&self.f3)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims_reject_zero() {
        assert!(Dims::new(0, 1, 1, 1).is_err());
        assert!(Dims::new(1, 1, 1, 0).is_err());
    }

    #[test]
    fn cut_space_sizes() {
        let d = Dims::new(3, 2, 1, 2).unwrap();
        assert_eq!(d.inner_dim(), 2 + 3 + 2 + 1);
        assert_eq!(d.outer_dim(), 4 + 2 + 3 + 2 + 1);
        // (1 + 3*2 + 3)^3 for N=2, d=(1,1,1)
        let d = Dims::new(1, 1, 1, 2).unwrap();
        assert_eq!(d.outer_poly_dim(), 1000.0);
        assert_eq!(d.inner_poly_dim(), 512.0);
    }

    #[test]
    fn oracle_counts_and_rejects_nan() {
        let f: Arc<dyn Objective> = Arc::new(FnObjective(
            |x: &[f64], _: &[f64], _: &[f64]| {
                if x[0] > 0.0 {
                    f64::NAN
                } else {
                    x[0]
                }
            },
        ));
        let o = ObjectiveOracle::new(Level::One, 0, f);
        assert_eq!(o.eval(&[-1.0], &[], &[]).unwrap(), -1.0);
        assert_eq!(o.eval_count(), 1);
        match o.eval(&[1.0], &[2.0], &[3.0]) {
            Err(DtzoError::Evaluation { point, .. }) => assert_eq!(point, vec![1.0, 2.0, 3.0]),
            other => panic!("{other:?}"),
        }
        assert_eq!(o.eval_count(), 2);
        assert!(matches!(
            o.gradient(&[0.0], &[], &[]),
            Err(DtzoError::Mode(_))
        ));
    }

    #[test]
    fn state_shape_checks() {
        let d = Dims::new(2, 1, 1, 3).unwrap();
        let mut s = SystemState::zeros(&d);
        s.check(&d).unwrap();
        assert!(s.is_finite());
        s.x2[1] = vec![0.0, 0.0];
        assert!(s.check(&d).is_err());
        s.x2[1] = vec![f64::INFINITY];
        assert!(!s.is_finite());
    }
}
