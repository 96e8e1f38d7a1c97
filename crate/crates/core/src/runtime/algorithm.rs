//! The full training loop: synchronous worker and master rounds plus the
//! cut-refresh schedule.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cuts::{
    generate_cut_with_base, generate_rho_cut_from_structure, rho_bounds, CutPool, Layer,
    PruneOutcome, QuadraticCut,
};
use crate::error::{DtzoError, Result};
use crate::layout::{flatten_inner, flatten_outer};
use crate::penalty::{eval_f, stationarity_gap, stationarity_gap_zo, FValue, OGrad, StepSizes};
use crate::phi::{
    inner_context_point, phi_in_master_round, phi_out_master_round, ExactPhi, InnerCutContext,
    KStepPhiIn, KStepPhiOut, PhiEstimator, PhiStreams,
};
use crate::problem::{Problem, SystemState};
use crate::rng::{Purpose, RngStream, Role};
use crate::runtime::config::{expected_comm, CutSource, GapMode, RunConfig};
use crate::runtime::ledger::{CommLedger, ExpectedComm};
use crate::runtime::master::{master_step, MasterHub};
use crate::runtime::transport::connect;
use crate::runtime::worker::WorkerNode;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapPoint {
    pub t: usize,
    pub gap: f64,
    pub stderr: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FPoint {
    pub t: usize,
    pub f: FValue,
}

/// One refresh event: residual values at the iterate, the new cut ids and
/// what pruning removed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefreshRecord {
    pub t: usize,
    pub event: u64,
    pub phi_in: f64,
    pub phi_out: f64,
    pub inner_id: u64,
    pub outer_id: u64,
    pub pruned: PruneOutcome,
    pub pool_inner: usize,
    pub pool_outer: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub final_state: SystemState,
    pub final_f: FValue,
    pub gap_trace: Vec<GapPoint>,
    pub f_trace: Vec<FPoint>,
    pub ledger: CommLedger,
    pub expected: ExpectedComm,
    /// Every generated cut in generation order, pruned or not.
    pub cut_history: Vec<QuadraticCut>,
    pub refreshes: Vec<RefreshRecord>,
    pub final_pool: CutPool,
    /// Iterations executed.
    pub t_reached: usize,
    /// First iteration whose gap fell to `eps_stop`.
    pub t_eps: Option<usize>,
    pub steps: StepSizes,
    /// Oracle calls per level, including diagnostics.
    pub eval_counts: [u64; 3],
    /// `f1` calls spent on the `F` trace and gap estimates.
    pub diagnostic_evals: u64,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn final_gap(&self) -> Option<f64> {
        self.gap_trace.last().map(|g| g.gap)
    }
}

/// Worker threads: `DTZO_THREADS` if set, else the available parallelism.
pub fn thread_count() -> Result<usize> {
    match std::env::var("DTZO_THREADS") {
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(DtzoError::Config(format!(
                "DTZO_THREADS must be a positive integer, got {s:?}"
            ))),
        },
        Err(_) => Ok(std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)),
    }
}

/// Runs the algorithm until `t_max` iterations or until the tracked gap
/// reaches `eps_stop`. Resets the problem's oracle counters first.
pub fn run_algorithm(problem: &Problem, cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate(&problem.dims)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count()?)
        .build()
        .map_err(|e| DtzoError::Config(format!("thread pool: {e}")))?;
    pool.install(|| Driver::new(problem, cfg)?.run())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, Copy)]
enum Gap {
    WhiteBox,
    Zo { every: usize, batch: usize },
    Off,
}

struct Driver<'a> {
    problem: &'a Problem,
    cfg: &'a RunConfig,
    steps: StepSizes,
    hub: MasterHub,
    nodes: Vec<WorkerNode<'a>>,
    state: SystemState,
    grad_o: OGrad,
    pool: CutPool,
    history: Vec<QuadraticCut>,
    refreshes: Vec<RefreshRecord>,
    event: u64,
    gap: Gap,
    diagnostic_evals: u64,
}

impl<'a> Driver<'a> {
    fn new(problem: &'a Problem, cfg: &'a RunConfig) -> Result<Self> {
        let dims = problem.dims;
        let steps = cfg.step_sizes(&dims)?;
        let (m, w) = connect(cfg.transport, &dims)?;
        let nodes = w
            .into_iter()
            .enumerate()
            .map(|(j, link)| WorkerNode::new(j, problem, cfg, steps, link))
            .collect();
        let init = &problem.init;
        let white = (0..dims.n_workers)
            .all(|j| problem.f1[j].has_gradient(&init.x1[j], &init.x2[j], &init.x3[j]));
        let gap = match cfg.gap {
            GapMode::Auto if white => Gap::WhiteBox,
            GapMode::Auto if cfg.eps_stop.is_some() => Gap::Zo {
                every: 10,
                batch: 64,
            },
            GapMode::Auto | GapMode::Off => Gap::Off,
            GapMode::WhiteBox => Gap::WhiteBox,
            GapMode::ZerothOrder { every, batch } => Gap::Zo { every, batch },
        };
        problem.reset_counts();
        let mut state = init.clone();
        state.t = 0;
        Ok(Driver {
            problem,
            cfg,
            steps,
            hub: MasterHub::new(dims, m)?,
            nodes,
            state,
            grad_o: OGrad::zeros(&dims),
            pool: CutPool::new(),
            history: Vec::new(),
            refreshes: Vec::new(),
            event: 0,
            gap,
            diagnostic_evals: 0,
        })
    }

    fn run(mut self) -> Result<RunReport> {
        let cfg = self.cfg;
        let mut gap_trace = Vec::new();
        let mut f_trace = Vec::new();
        let mut t_eps = None;
        let mut t_reached = 0;
        for t in 0..cfg.t_max {
            self.iteration(t).map_err(|e| e.at(t))?;
            t_reached = t + 1;
            let g = self.gap_at(t + 1).map_err(|e| e.at(t))?;
            if cfg.trace_every > 0 && (t + 1) % cfg.trace_every == 0 {
                let f = self
                    .diag(|s| eval_f(s.problem, &s.state, &s.pool.outer, &s.cfg.penalty))
                    .map_err(|e| e.at(t))?;
                f_trace.push(FPoint { t: t + 1, f });
            }
            if let Some(g) = g {
                gap_trace.push(g);
                if cfg.eps_stop.is_some_and(|eps| g.gap <= eps) {
                    t_eps = Some(t + 1);
                    break;
                }
            }
        }
        self.hub.shutdown()?;
        for n in &mut self.nodes {
            n.receive_shutdown()?;
        }
        let final_f = self.diag(|s| eval_f(s.problem, &s.state, &s.pool.outer, &s.cfg.penalty))?;
        let dims = self.problem.dims;
        Ok(RunReport {
            final_state: self.state,
            final_f,
            gap_trace,
            f_trace,
            ledger: self.hub.ledger.clone(),
            expected: expected_comm(cfg, &dims, t_reached),
            cut_history: self.history,
            refreshes: self.refreshes,
            final_pool: self.pool,
            t_reached,
            t_eps,
            steps: self.steps,
            eval_counts: self.problem.eval_counts(),
            diagnostic_evals: self.diagnostic_evals,
        })
    }

    /// Runs `f` and books its `f1` calls as diagnostic.
    fn diag<T>(&mut self, f: impl FnOnce(&Self) -> Result<T>) -> Result<T> {
        let before = self.problem.eval_counts()[0];
        let out = f(self);
        self.diagnostic_evals += self.problem.eval_counts()[0] - before;
        out
    }

    fn gap_at(&mut self, t: usize) -> Result<Option<GapPoint>> {
        match self.gap {
            Gap::Off => Ok(None),
            Gap::WhiteBox => {
                let gap = stationarity_gap(
                    self.problem,
                    &self.state,
                    &self.pool.outer,
                    &self.cfg.penalty,
                )?;
                Ok(Some(GapPoint {
                    t,
                    gap,
                    stderr: None,
                }))
            }
            Gap::Zo { every, batch } => {
                if t % every != 0 {
                    return Ok(None);
                }
                let z = self.diag(|s| {
                    let mut stream =
                        RngStream::new(s.cfg.seed, Role::Diagnostics, 0, Purpose::GapEstimate)
                            .substream(t as u64);
                    stationarity_gap_zo(
                        s.problem,
                        &s.state,
                        &s.pool.outer,
                        &s.cfg.penalty,
                        s.cfg.smoothing.mu,
                        batch,
                        &mut stream,
                    )
                })?;
                Ok(Some(GapPoint {
                    t,
                    gap: z.gap,
                    stderr: Some(z.stderr),
                }))
            }
        }
    }

    fn iteration(&mut self, t: usize) -> Result<()> {
        self.nodes.par_iter_mut().try_for_each(|n| n.iterate())?;
        let updates = self.hub.collect_updates()?;
        let out = master_step(
            &self.state,
            &updates,
            &self.grad_o,
            &self.pool.outer,
            &self.cfg.penalty,
            &self.steps,
        )?;
        self.state = out.state;
        self.grad_o = out.grad_o;
        self.hub.broadcast(&self.state, &self.grad_o)?;
        self.nodes
            .par_iter_mut()
            .try_for_each(|n| n.receive_broadcast())?;
        if (t + 1) % self.cfg.cadence == 0 && t < self.cfg.t1 {
            self.refresh(t + 1)?;
        }
        Ok(())
    }

    /// Transported `K`-round evaluation of the residual at the current
    /// iterate. Returns the squared displacement, bit-identical to the local
    /// estimator with the same streams.
    fn exchange(&mut self, layer: Layer, x0: Vec<Vec<f64>>, z0: Vec<f64>) -> Result<f64> {
        let (cfg, event) = (self.cfg, self.event);
        let rounds = cfg.phi_rounds();
        let dims = self.problem.dims;
        let v_inner = inner_context_point(
            &dims,
            &self.state.x3,
            &self.state.z1,
            &self.state.z2,
            &self.state.z3,
        );
        self.nodes
            .par_iter_mut()
            .for_each(|n| n.phi_begin(layer, event));
        let mut x = x0.clone();
        let mut z = z0.clone();
        for _ in 0..rounds {
            self.nodes
                .par_iter_mut()
                .try_for_each(|n| n.phi_round_up())?;
            x = self.hub.collect_round(z.len())?;
            z = match layer {
                Layer::Inner => phi_in_master_round(&z, &x, &cfg.phi.gamma, cfg.phi.eta_z),
                Layer::Outer => {
                    let ctx = InnerCutContext {
                        dims,
                        cuts: &self.pool.inner,
                        v_inner: &v_inner,
                    };
                    phi_out_master_round(&z, &x, &cfg.phi, Some(ctx))?
                }
            };
            self.hub.send_round(&z)?;
            self.nodes
                .par_iter_mut()
                .try_for_each(|n| n.phi_round_down())?;
        }
        self.nodes.iter_mut().for_each(|n| n.phi_end());
        Ok(x.iter().zip(&x0).map(|(a, b)| sq_dist(a, b)).sum::<f64>() + sq_dist(&z, &z0))
    }

    fn new_cut(&mut self, layer: Layer, v: &[f64]) -> Result<(QuadraticCut, f64)> {
        let (cfg, problem, event) = (self.cfg, self.problem, self.event);
        let dims = problem.dims;
        let (eps, purpose, inner) = match layer {
            Layer::Inner => (cfg.penalty.eps_in, Purpose::InnerCutDirections, true),
            Layer::Outer => (cfg.penalty.eps_out, Purpose::OuterCutDirections, false),
        };
        let mut dirs = RngStream::new(cfg.seed, Role::Master, 0, purpose).substream(event);
        match cfg.cut_source(inner) {
            CutSource::Rho => {
                let r = cfg.greybox.rho_cuts.expect("rho source implies rho config");
                let s = problem.structure.as_deref();
                let cut = generate_rho_cut_from_structure(
                    s,
                    layer,
                    v,
                    r.rho,
                    &rho_bounds(layer, &dims, r.radii),
                    eps,
                )?;
                let s = problem.structure()?;
                let phi = match layer {
                    Layer::Inner => s.phi_in(v)?,
                    Layer::Outer => s.phi_out(v)?,
                };
                Ok((cut, phi))
            }
            CutSource::Exact => {
                let est = ExactPhi {
                    structure: problem.structure()?.clone(),
                    layer,
                };
                let phi = est.eval(v)?;
                let g = generate_cut_with_base(
                    &dims,
                    layer,
                    v,
                    phi,
                    &est,
                    &cfg.smoothing,
                    eps,
                    &mut dirs,
                )?;
                Ok((g.cut, phi))
            }
            CutSource::KStep => {
                let rounds = cfg.phi_rounds();
                let streams = PhiStreams::new(cfg.seed, event);
                let st = &self.state;
                let phi = match layer {
                    Layer::Inner => self.exchange(layer, st.x3.clone(), st.z3.clone())?,
                    Layer::Outer => self.exchange(layer, st.x2.clone(), st.z2.clone())?,
                };
                let g = match layer {
                    Layer::Inner => {
                        let est = KStepPhiIn::new(problem, &cfg.phi, rounds, streams);
                        generate_cut_with_base(
                            &dims,
                            layer,
                            v,
                            phi,
                            &est,
                            &cfg.smoothing,
                            eps,
                            &mut dirs,
                        )?
                    }
                    Layer::Outer => {
                        let est =
                            KStepPhiOut::new(problem, &cfg.phi, rounds, streams, &self.pool.inner);
                        generate_cut_with_base(
                            &dims,
                            layer,
                            v,
                            phi,
                            &est,
                            &cfg.smoothing,
                            eps,
                            &mut dirs,
                        )?
                    }
                };
                Ok((g.cut, phi))
            }
        }
    }

    /// One inner and one outer cut at the current iterate, then pruning.
    fn refresh(&mut self, t: usize) -> Result<()> {
        let dims = self.problem.dims;
        let v_in = flatten_inner(&dims, &self.state, &self.state.z2)?;
        let (cut, phi_in) = self.new_cut(Layer::Inner, &v_in)?;
        let inner_id = self.pool.add(cut, t);
        self.history
            .push(self.pool.inner.last().expect("just added").clone());
        let v_out = flatten_outer(&dims, &self.state)?;
        let (cut, phi_out) = self.new_cut(Layer::Outer, &v_out)?;
        let outer_id = self.pool.add(cut, t);
        self.history
            .push(self.pool.outer.last().expect("just added").clone());
        let pruned = if self.cfg.prune {
            self.pool.prune_inactive(&v_in, &v_out)?
        } else {
            PruneOutcome::default()
        };
        self.refreshes.push(RefreshRecord {
            t,
            event: self.event,
            phi_in,
            phi_out,
            inner_id,
            outer_id,
            pruned,
            pool_inner: self.pool.inner.len(),
            pool_outer: self.pool.outer.len(),
        });
        self.event += 1;
        Ok(())
    }
}
