//! Scalar-transmission accounting.

use serde::{Deserialize, Serialize};

use crate::problem::Dims;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Iteration,
    CutUpdate,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseCount {
    pub up: u64,
    pub down: u64,
}

impl PhaseCount {
    pub fn total(&self) -> u64 {
        self.up + self.down
    }
}

/// Scalars sent worker-to-master (`up`) and master-to-worker (`down`).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommLedger {
    pub up_scalars: u64,
    pub down_scalars: u64,
    pub iteration: PhaseCount,
    pub cut_update: PhaseCount,
    pub messages: u64,
}

impl CommLedger {
    fn phase(&mut self, p: Phase) -> &mut PhaseCount {
        match p {
            Phase::Iteration => &mut self.iteration,
            Phase::CutUpdate => &mut self.cut_update,
        }
    }

    pub fn record_up(&mut self, p: Phase, n: usize) {
        self.up_scalars += n as u64;
        self.phase(p).up += n as u64;
        self.messages += 1;
    }

    pub fn record_down(&mut self, p: Phase, n: usize) {
        self.down_scalars += n as u64;
        self.phase(p).down += n as u64;
        self.messages += 1;
    }

    pub fn total(&self) -> u64 {
        self.up_scalars + self.down_scalars
    }
}

/// Predicted totals: `C1` for the per-iteration exchange, `C2` for the
/// lower-level rounds of cut refreshes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedComm {
    pub c1: u64,
    pub c2: u64,
    pub total: u64,
}

/// Number of refresh events among iterations `0..t_reached` with
/// `(t+1) mod cadence == 0` and `t < t1`.
pub fn refresh_events(t_reached: usize, t1: usize, cadence: usize) -> usize {
    t_reached.min(t1) / cadence.max(1)
}

/// `C1 = T (2 d1 + 3 d2 + 3 d3) N` and
/// `C2 = 2 N E R (d2 [outer exchanged] + d3 [inner exchanged])`, with `E`
/// refresh events and `R` lower-level rounds per event. With `R = cadence`
/// and both layers exchanged, `C2 = 2 N floor(T1/cadence) cadence (d2 + d3)`
/// whenever the run reaches `T1`.
#[allow(clippy::too_many_arguments)]
pub fn expected_comm_raw(
    dims: &Dims,
    t_reached: usize,
    t1: usize,
    cadence: usize,
    rounds: usize,
    inner_exchanged: bool,
    outer_exchanged: bool,
) -> ExpectedComm {
    let n = dims.n_workers as u64;
    let c1 = t_reached as u64 * (2 * dims.d1 + 3 * dims.d2 + 3 * dims.d3) as u64 * n;
    let per_round = (if outer_exchanged { dims.d2 } else { 0 }
        + if inner_exchanged { dims.d3 } else { 0 }) as u64;
    let c2 = 2 * n * refresh_events(t_reached, t1, cadence) as u64 * rounds as u64 * per_round;
    ExpectedComm {
        c1,
        c2,
        total: c1 + c2,
    }
}
