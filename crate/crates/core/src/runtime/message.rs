//! Protocol messages and their logical sizes.

use serde::{Deserialize, Serialize};

use crate::problem::Dims;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Message {
    /// Worker `j`'s new local blocks.
    WorkerUpdate {
        j: usize,
        x1: Vec<f64>,
        x2: Vec<f64>,
        x3: Vec<f64>,
    },
    /// Consensus blocks plus the receiving worker's slices of `grad o`.
    MasterBroadcast {
        z1: Vec<f64>,
        z2: Vec<f64>,
        z3: Vec<f64>,
        grad_x2: Vec<f64>,
        grad_x3: Vec<f64>,
    },
    /// One lower-level round: a worker's updated block.
    PhiRoundUp {
        j: usize,
        block: Vec<f64>,
    },
    /// One lower-level round: the master's updated consensus block.
    PhiRoundDown {
        block: Vec<f64>,
    },
    Shutdown,
}

impl Message {
    /// Number of payload scalars the ledger charges for this message. The
    /// sender index carried by upward messages is addressing, not payload.
    pub fn scalar_count(&self) -> usize {
        match self {
            Message::WorkerUpdate { x1, x2, x3, .. } => x1.len() + x2.len() + x3.len(),
            Message::MasterBroadcast {
                z1,
                z2,
                z3,
                grad_x2,
                grad_x3,
            } => z1.len() + z2.len() + z3.len() + grad_x2.len() + grad_x3.len(),
            Message::PhiRoundUp { block, .. } | Message::PhiRoundDown { block } => block.len(),
            Message::Shutdown => 0,
        }
    }

    /// Expected logical size of a message with this tag, derived from `dims`.
    /// Lower-level round messages depend on the layer: `level` 3 for the
    /// inner procedure, 2 for the outer one.
    pub fn expected_count(tag: Tag, dims: &Dims, level: usize) -> usize {
        match tag {
            Tag::WorkerUpdate => dims.d1 + dims.d2 + dims.d3,
            Tag::MasterBroadcast => dims.d1 + 2 * dims.d2 + 2 * dims.d3,
            Tag::PhiRoundUp | Tag::PhiRoundDown => {
                if level == 2 {
                    dims.d2
                } else {
                    dims.d3
                }
            }
            Tag::Shutdown => 0,
        }
    }

    pub fn tag(&self) -> Tag {
        match self {
            Message::WorkerUpdate { .. } => Tag::WorkerUpdate,
            Message::MasterBroadcast { .. } => Tag::MasterBroadcast,
            Message::PhiRoundUp { .. } => Tag::PhiRoundUp,
            Message::PhiRoundDown { .. } => Tag::PhiRoundDown,
            Message::Shutdown => Tag::Shutdown,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tag {
    WorkerUpdate = 1,
    MasterBroadcast = 2,
    PhiRoundUp = 3,
    PhiRoundDown = 4,
    Shutdown = 5,
}

impl Tag {
    pub fn from_byte(b: u8) -> Option<Tag> {
        Some(match b {
            1 => Tag::WorkerUpdate,
            2 => Tag::MasterBroadcast,
            3 => Tag::PhiRoundUp,
            4 => Tag::PhiRoundDown,
            5 => Tag::Shutdown,
            _ => return None,
        })
    }
}
