//! Worker-side updates and the worker protocol endpoint.

use crate::cuts::Layer;
use crate::error::{check_len, DtzoError, Result};
use crate::penalty::StepSizes;
use crate::phi::{phi_in_worker_round, phi_out_worker_round, PhiStreams};
use crate::problem::{ObjectiveOracle, Problem};
use crate::rng::{Purpose, RngStream, Role};
use crate::runtime::config::RunConfig;
use crate::runtime::message::Message;
use crate::runtime::transport::Channel;
use crate::zo::two_point_with_base;

/// Worker `j`'s local blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalBlocks {
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub x3: Vec<f64>,
}

/// What a worker last heard from the master.
#[derive(Debug, Clone, PartialEq)]
pub struct Broadcast {
    pub z1: Vec<f64>,
    pub z2: Vec<f64>,
    pub z3: Vec<f64>,
    pub grad_x2: Vec<f64>,
    pub grad_x3: Vec<f64>,
}

impl Broadcast {
    pub fn into_message(self) -> Message {
        Message::MasterBroadcast {
            z1: self.z1,
            z2: self.z2,
            z3: self.z3,
            grad_x2: self.grad_x2,
            grad_x3: self.grad_x3,
        }
    }
}

/// One direction stream per block.
#[derive(Debug, Clone)]
pub struct WorkerStreams {
    pub x1: RngStream,
    pub x2: RngStream,
    pub x3: RngStream,
}

impl WorkerStreams {
    pub fn new(seed: u64, j: usize) -> Self {
        let s = |p| RngStream::new(seed, Role::Worker, j as u64, p);
        WorkerStreams {
            x1: s(Purpose::X1Direction),
            x2: s(Purpose::X2Direction),
            x3: s(Purpose::X3Direction),
        }
    }
}

fn mean_estimate<F>(
    f: &mut F,
    x: &[f64],
    fx: f64,
    mu: f64,
    batch: usize,
    stream: &mut RngStream,
) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut g = vec![0.0; x.len()];
    for _ in 0..batch {
        let u = stream.gaussian(x.len())?;
        let e = two_point_with_base(f, x, fx, mu, &u)?;
        for (a, b) in g.iter_mut().zip(e) {
            *a += b;
        }
    }
    let b = batch as f64;
    g.iter_mut().for_each(|a| *a /= b);
    Ok(g)
}

/// One local update. Each block's `f1_j` gradient is a two-point estimate
/// (mean over `cfg.worker_batch` directions) sharing one base evaluation, so
/// a plain step costs `1 + 3 b` evaluations. In grey-box level-1 mode the
/// exact gradient replaces the estimates.
#[allow(clippy::too_many_arguments)]
pub fn worker_step(
    j: usize,
    local: &LocalBlocks,
    bc: &Broadcast,
    f1: &ObjectiveOracle,
    cfg: &RunConfig,
    steps: &StepSizes,
    streams: &mut WorkerStreams,
) -> Result<LocalBlocks> {
    check_len("x1_j vs z1", bc.z1.len(), local.x1.len())?;
    check_len("grad_o x2_j", local.x2.len(), bc.grad_x2.len())?;
    check_len("grad_o x3_j", local.x3.len(), bc.grad_x3.len())?;
    let (x1, x2, x3) = (&local.x1, &local.x2, &local.x3);
    let (g1, g2, g3) = if cfg.greybox.level1_gradients {
        let g = f1.gradient(x1, x2, x3)?;
        (g.g1, g.g2, g.g3)
    } else {
        let (mu, b) = (cfg.smoothing.mu, cfg.worker_batch);
        let base = f1.eval(x1, x2, x3)?;
        let g1 = mean_estimate(
            &mut |v: &[f64]| f1.eval(v, x2, x3),
            x1,
            base,
            mu,
            b,
            &mut streams.x1,
        )?;
        let g2 = mean_estimate(
            &mut |v: &[f64]| f1.eval(x1, v, x3),
            x2,
            base,
            mu,
            b,
            &mut streams.x2,
        )?;
        let g3 = mean_estimate(
            &mut |v: &[f64]| f1.eval(x1, x2, v),
            x3,
            base,
            mu,
            b,
            &mut streams.x3,
        )?;
        (g1, g2, g3)
    };
    let phi_j = cfg.penalty.consensus.get(j);
    let step = |x: &[f64], g: &[f64], extra: &dyn Fn(usize) -> f64, eta: f64| -> Vec<f64> {
        (0..x.len())
            .map(|k| x[k] - eta * (g[k] + extra(k)))
            .collect()
    };
    Ok(LocalBlocks {
        x1: step(x1, &g1, &|k| 2.0 * phi_j * (x1[k] - bc.z1[k]), steps.eta_x1),
        x2: step(x2, &g2, &|k| bc.grad_x2[k], steps.eta_x2),
        x3: step(x3, &g3, &|k| bc.grad_x3[k], steps.eta_x3),
    })
}

/// Scratch state of one lower-level exchange.
#[derive(Debug, Clone)]
struct PhiScratch {
    layer: Layer,
    x: Vec<f64>,
    z: Vec<f64>,
    stream: RngStream,
}

/// A worker: local blocks, last broadcast, direction streams and its link.
pub struct WorkerNode<'a> {
    pub j: usize,
    problem: &'a Problem,
    cfg: &'a RunConfig,
    steps: StepSizes,
    link: Box<dyn Channel>,
    pub local: LocalBlocks,
    pub view: Broadcast,
    streams: WorkerStreams,
    phi: Option<PhiScratch>,
}

impl<'a> WorkerNode<'a> {
    /// Starts from the problem's initial blocks with `grad o = 0`.
    pub fn new(
        j: usize,
        problem: &'a Problem,
        cfg: &'a RunConfig,
        steps: StepSizes,
        link: Box<dyn Channel>,
    ) -> Self {
        let init = &problem.init;
        WorkerNode {
            j,
            problem,
            cfg,
            steps,
            link,
            local: LocalBlocks {
                x1: init.x1[j].clone(),
                x2: init.x2[j].clone(),
                x3: init.x3[j].clone(),
            },
            view: Broadcast {
                z1: init.z1.clone(),
                z2: init.z2.clone(),
                z3: init.z3.clone(),
                grad_x2: vec![0.0; problem.dims.d2],
                grad_x3: vec![0.0; problem.dims.d3],
            },
            streams: WorkerStreams::new(cfg.seed, j),
            phi: None,
        }
    }

    /// Local update, then send it to the master.
    pub fn iterate(&mut self) -> Result<()> {
        self.local = worker_step(
            self.j,
            &self.local,
            &self.view,
            &self.problem.f1[self.j],
            self.cfg,
            &self.steps,
            &mut self.streams,
        )?;
        self.link.send(&Message::WorkerUpdate {
            j: self.j,
            x1: self.local.x1.clone(),
            x2: self.local.x2.clone(),
            x3: self.local.x3.clone(),
        })
    }

    pub fn receive_broadcast(&mut self) -> Result<()> {
        match self.link.recv(0)? {
            Message::MasterBroadcast {
                z1,
                z2,
                z3,
                grad_x2,
                grad_x3,
            } => {
                self.view = Broadcast {
                    z1,
                    z2,
                    z3,
                    grad_x2,
                    grad_x3,
                };
                Ok(())
            }
            m => Err(DtzoError::Protocol(format!(
                "worker {} expected a broadcast, got {:?}",
                self.j,
                m.tag()
            ))),
        }
    }

    /// Enters lower-level exchange `event` for `layer`, warm-started at the
    /// current local block and the last broadcast consensus block.
    pub fn phi_begin(&mut self, layer: Layer, event: u64) {
        let (x, z) = match layer {
            Layer::Inner => (self.local.x3.clone(), self.view.z3.clone()),
            Layer::Outer => (self.local.x2.clone(), self.view.z2.clone()),
        };
        self.phi = Some(PhiScratch {
            layer,
            x,
            z,
            stream: PhiStreams::new(self.cfg.seed, event).worker(layer, self.j, 0),
        });
    }

    /// One worker round of the active exchange; sends the new block up.
    pub fn phi_round_up(&mut self) -> Result<()> {
        let s = self
            .phi
            .as_mut()
            .ok_or_else(|| DtzoError::Protocol("no lower-level exchange in progress".into()))?;
        let (v, j, p) = (&self.view, self.j, self.problem);
        s.x = match s.layer {
            Layer::Inner => phi_in_worker_round(
                &p.f3[j],
                &v.z1,
                &v.z2,
                &s.x,
                &s.z,
                self.cfg.phi.gamma.get(j),
                &self.cfg.phi,
                &mut s.stream,
            )?,
            Layer::Outer => phi_out_worker_round(
                &p.f2[j],
                &v.z1,
                &s.x,
                &self.local.x3,
                &s.z,
                self.cfg.phi.phi_prime.get(j),
                &self.cfg.phi,
                &mut s.stream,
            )?,
        };
        self.link.send(&Message::PhiRoundUp {
            j,
            block: s.x.clone(),
        })
    }

    pub fn phi_round_down(&mut self) -> Result<()> {
        let s = self
            .phi
            .as_mut()
            .ok_or_else(|| DtzoError::Protocol("no lower-level exchange in progress".into()))?;
        match self.link.recv(s.z.len())? {
            Message::PhiRoundDown { block } => {
                check_len("lower-level consensus block", s.z.len(), block.len())?;
                s.z = block;
                Ok(())
            }
            m => Err(DtzoError::Protocol(format!(
                "worker {} expected a round reply, got {:?}",
                self.j,
                m.tag()
            ))),
        }
    }

    pub fn phi_end(&mut self) {
        self.phi = None;
    }

    pub fn receive_shutdown(&mut self) -> Result<()> {
        match self.link.recv(0)? {
            Message::Shutdown => Ok(()),
            m => Err(DtzoError::Protocol(format!(
                "worker {} expected shutdown, got {:?}",
                self.j,
                m.tag()
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{BlockGradient, Dims, Level, Objective, SystemState};
    use std::sync::Arc;

    struct Linear;
    impl Objective for Linear {
        fn value(&self, x1: &[f64], x2: &[f64], x3: &[f64]) -> f64 {
            2.0 * x1[0] - x2[0] + 0.5 * x3[0]
        }
        fn gradient(&self, _: &[f64], _: &[f64], _: &[f64]) -> Option<BlockGradient> {
            Some(BlockGradient {
                g1: vec![2.0],
                g2: vec![-1.0],
                g3: vec![0.5],
            })
        }
    }

    fn oracle(f: Arc<dyn Objective>) -> ObjectiveOracle {
        ObjectiveOracle::new(Level::One, 0, f)
    }

    fn bc(z1: f64) -> Broadcast {
        Broadcast {
            z1: vec![z1],
            z2: vec![0.0],
            z3: vec![0.0],
            grad_x2: vec![0.0],
            grad_x3: vec![0.0],
        }
    }

    fn blocks(x1: f64) -> LocalBlocks {
        LocalBlocks {
            x1: vec![x1],
            x2: vec![0.3],
            x3: vec![-0.2],
        }
    }

    #[test]
    fn constant_objective_at_consensus_is_fixed() {
        let f = oracle(Arc::new(crate::problem::FnObjective(
            |_: &[f64], _: &[f64], _: &[f64]| 1.5,
        )));
        let cfg = RunConfig::new(0, 10, 0, 1);
        let mut s = WorkerStreams::new(0, 0);
        let out = worker_step(
            0,
            &blocks(0.4),
            &bc(0.4),
            &f,
            &cfg,
            &StepSizes::uniform(0.1),
            &mut s,
        )
        .unwrap();
        assert_eq!(out, blocks(0.4));
        assert_eq!(f.eval_count(), 4);
    }

    #[test]
    fn consensus_only_step() {
        let f = oracle(Arc::new(crate::problem::FnObjective(
            |_: &[f64], _: &[f64], _: &[f64]| 0.0,
        )));
        let cfg = RunConfig::new(0, 10, 0, 1);
        let mut s = WorkerStreams::new(0, 0);
        let out = worker_step(
            0,
            &blocks(1.0),
            &bc(0.0),
            &f,
            &cfg,
            &StepSizes::uniform(0.1),
            &mut s,
        )
        .unwrap();
        assert!((out.x1[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn batch_costs_one_plus_three_b() {
        let f = oracle(Arc::new(Linear));
        let mut cfg = RunConfig::new(0, 10, 0, 1);
        cfg.worker_batch = 5;
        let mut s = WorkerStreams::new(0, 0);
        worker_step(
            0,
            &blocks(1.0),
            &bc(0.0),
            &f,
            &cfg,
            &StepSizes::uniform(0.1),
            &mut s,
        )
        .unwrap();
        assert_eq!(f.eval_count(), 16);
    }

    #[test]
    fn greybox_is_exact_gradient_step() {
        let f = oracle(Arc::new(Linear));
        let mut cfg = RunConfig::new(0, 10, 0, 1);
        cfg.greybox.level1_gradients = true;
        let mut s = WorkerStreams::new(0, 0);
        let mut b = bc(0.0);
        b.grad_x3 = vec![1.0];
        let out = worker_step(
            0,
            &blocks(1.0),
            &b,
            &f,
            &cfg,
            &StepSizes::uniform(0.1),
            &mut s,
        )
        .unwrap();
        // x1: 1 - 0.1 (2 + 2), x2: 0.3 - 0.1 (-1), x3: -0.2 - 0.1 (0.5 + 1)
        assert!((out.x1[0] - 0.6).abs() < 1e-15);
        assert!((out.x2[0] - 0.4).abs() < 1e-15);
        assert!((out.x3[0] + 0.35).abs() < 1e-15);
        assert_eq!(f.eval_count(), 0);
    }

    #[test]
    fn node_starts_from_init() {
        let d = Dims::new(1, 1, 1, 1).unwrap();
        let lin: Arc<dyn Objective> = Arc::new(Linear);
        let mut init = SystemState::zeros(&d);
        init.x1[0] = vec![3.0];
        let p = Problem::new(d, vec![lin.clone()], vec![lin.clone()], vec![lin], init).unwrap();
        let cfg = RunConfig::new(0, 10, 0, 1);
        let (_m, w) = crate::runtime::transport::in_process_pair();
        let node = WorkerNode::new(0, &p, &cfg, StepSizes::uniform(0.1), Box::new(w));
        assert_eq!(node.local.x1, vec![3.0]);
        assert_eq!(node.view.grad_x2, vec![0.0]);
    }
}
