//! Master-side consensus update and the master's transport endpoints.

use crate::cuts::QuadraticCut;
use crate::error::{check_len, DtzoError, Result};
use crate::penalty::{grad_o, OGrad, PenaltyConfig, StepSizes};
use crate::problem::{Dims, SystemState};
use crate::runtime::ledger::{CommLedger, Phase};
use crate::runtime::message::Message;
use crate::runtime::transport::Channel;
use crate::runtime::worker::{Broadcast, LocalBlocks};

/// New iterate and `grad o` evaluated at it.
#[derive(Debug, Clone, PartialEq)]
pub struct MasterOutcome {
    pub state: SystemState,
    pub grad_o: OGrad,
}

/// Consensus update from iteration `t` to `t + 1`.
///
/// `state` holds `x^t, z^t` and `grad_o_t` is `grad o` at that state (the one
/// broadcast last round). `z1` moves along
/// `sum_j 2 phi_j (z1 - x1_j^t) + grad_z1 o`; `z2`, `z3` along `grad o` only.
/// The returned state carries the workers' new blocks and the new consensus
/// blocks, with `grad o` recomputed there for the next broadcast.
pub fn master_step(
    state: &SystemState,
    updates: &[Option<LocalBlocks>],
    grad_o_t: &OGrad,
    outer_pool: &[QuadraticCut],
    pcfg: &PenaltyConfig,
    steps: &StepSizes,
) -> Result<MasterOutcome> {
    let n = state.x1.len();
    let dims = Dims::new(state.z1.len(), state.z2.len(), state.z3.len(), n)?;
    check_len("worker updates", n, updates.len())?;
    if let Some(j) = updates.iter().position(Option::is_none) {
        return Err(DtzoError::Protocol(format!(
            "missing update from worker {j} for iteration {}",
            state.t
        )));
    }
    let mut z1 = state.z1.clone();
    for (k, zk) in z1.iter_mut().enumerate() {
        let mut g = grad_o_t.z1[k];
        for j in 0..n {
            g += 2.0 * pcfg.consensus.get(j) * (state.z1[k] - state.x1[j][k]);
        }
        *zk -= steps.eta_z1 * g;
    }
    let descend = |z: &[f64], g: &[f64], eta: f64| -> Vec<f64> {
        z.iter().zip(g).map(|(a, b)| a - eta * b).collect()
    };
    let mut next = SystemState {
        x1: Vec::with_capacity(n),
        x2: Vec::with_capacity(n),
        x3: Vec::with_capacity(n),
        z1,
        z2: descend(&state.z2, &grad_o_t.z2, steps.eta_z2),
        z3: descend(&state.z3, &grad_o_t.z3, steps.eta_z3),
        t: state.t + 1,
    };
    for u in updates.iter().flatten() {
        next.x1.push(u.x1.clone());
        next.x2.push(u.x2.clone());
        next.x3.push(u.x3.clone());
    }
    next.check(&dims)?;
    let g = grad_o(&dims, outer_pool, &next, pcfg)?;
    Ok(MasterOutcome {
        state: next,
        grad_o: g,
    })
}

/// The master's links plus the ledger; every message through here is charged.
pub struct MasterHub {
    dims: Dims,
    links: Vec<Box<dyn Channel>>,
    pub ledger: CommLedger,
}

impl MasterHub {
    pub fn new(dims: Dims, links: Vec<Box<dyn Channel>>) -> Result<Self> {
        check_len("master links", dims.n_workers, links.len())?;
        Ok(MasterHub {
            dims,
            links,
            ledger: CommLedger::default(),
        })
    }

    pub fn send(&mut self, j: usize, msg: &Message, phase: Phase) -> Result<()> {
        self.links[j].send(msg)?;
        self.ledger.record_down(phase, msg.scalar_count());
        Ok(())
    }

    pub fn recv(&mut self, j: usize, phase: Phase, round_len: usize) -> Result<Message> {
        let msg = self.links[j].recv(round_len)?;
        self.ledger.record_up(phase, msg.scalar_count());
        Ok(msg)
    }

    /// One `WorkerUpdate` from every worker, in worker order.
    pub fn collect_updates(&mut self) -> Result<Vec<Option<LocalBlocks>>> {
        let mut out = Vec::with_capacity(self.dims.n_workers);
        for j in 0..self.dims.n_workers {
            match self.recv(j, Phase::Iteration, 0)? {
                Message::WorkerUpdate {
                    j: from,
                    x1,
                    x2,
                    x3,
                } if from == j => {
                    check_len("x1 update", self.dims.d1, x1.len())?;
                    check_len("x2 update", self.dims.d2, x2.len())?;
                    check_len("x3 update", self.dims.d3, x3.len())?;
                    out.push(Some(LocalBlocks { x1, x2, x3 }))
                }
                m => {
                    return Err(DtzoError::Protocol(format!(
                        "expected an update from worker {j}, got {:?}",
                        m.tag()
                    )))
                }
            }
        }
        Ok(out)
    }

    /// Sends `z` and each worker's slices of `grad o`.
    pub fn broadcast(&mut self, state: &SystemState, g: &OGrad) -> Result<()> {
        for j in 0..self.dims.n_workers {
            let msg = Broadcast {
                z1: state.z1.clone(),
                z2: state.z2.clone(),
                z3: state.z3.clone(),
                grad_x2: g.x2[j].clone(),
                grad_x3: g.x3[j].clone(),
            }
            .into_message();
            self.send(j, &msg, Phase::Iteration)?;
        }
        Ok(())
    }

    /// One round block from every worker.
    pub fn collect_round(&mut self, len: usize) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(self.dims.n_workers);
        for j in 0..self.dims.n_workers {
            match self.recv(j, Phase::CutUpdate, len)? {
                Message::PhiRoundUp { j: from, block } if from == j => {
                    check_len("round block", len, block.len())?;
                    out.push(block);
                }
                m => {
                    return Err(DtzoError::Protocol(format!(
                        "expected a round block from worker {j}, got {:?}",
                        m.tag()
                    )))
                }
            }
        }
        Ok(out)
    }

    pub fn send_round(&mut self, block: &[f64]) -> Result<()> {
        for j in 0..self.dims.n_workers {
            self.send(
                j,
                &Message::PhiRoundDown {
                    block: block.to_vec(),
                },
                Phase::CutUpdate,
            )?;
        }
        Ok(())
    }

    pub fn shutdown(&mut self) -> Result<()> {
        for j in 0..self.dims.n_workers {
            self.send(j, &Message::Shutdown, Phase::Iteration)?;
        }
        Ok(())
    }
}
