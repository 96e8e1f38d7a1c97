//! Counter-based random streams.
//!
//! Every draw is a pure function of `(seed, stream id, counter)`: the stream
//! id names who is drawing (master, worker `j`, a diagnostic harness) and for
//! what purpose, and the counter advances once per draw. Two roles never share
//! a stream, so a run reproduces bit-for-bit regardless of the order in which
//! workers execute.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{DtzoError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Master,
    Worker,
    Diagnostics,
    Experiment,
}

impl Role {
    fn code(self) -> u64 {
        match self {
            Role::Master => 1,
            Role::Worker => 2,
            Role::Diagnostics => 3,
            Role::Experiment => 4,
        }
    }
}

/// What a stream is used for. Distinct purposes of the same role get
/// independent sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Purpose {
    X1Direction,
    X2Direction,
    X3Direction,
    InnerCutDirections,
    OuterCutDirections,
    PhiInner,
    PhiOuter,
    GapEstimate,
    Init,
    Data,
    Trial,
    Custom(u32),
}

impl Purpose {
    fn code(self) -> u64 {
        match self {
            Purpose::X1Direction => 1,
            Purpose::X2Direction => 2,
            Purpose::X3Direction => 3,
            Purpose::InnerCutDirections => 4,
            Purpose::OuterCutDirections => 5,
            Purpose::PhiInner => 6,
            Purpose::PhiOuter => 7,
            Purpose::GapEstimate => 8,
            Purpose::Init => 9,
            Purpose::Data => 10,
            Purpose::Trial => 11,
            Purpose::Custom(c) => 0x1_0000 + u64::from(c),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamId {
    pub role: Role,
    pub index: u64,
    pub purpose: Purpose,
    /// Hash of any substream path below the base id (0 for a base stream).
    pub sub: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
    id: StreamId,
    counter: u64,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn mix(words: &[u64]) -> u64 {
    let mut state = 0x243F_6A88_85A3_08D3;
    let mut acc = 0;
    for &w in words {
        state ^= w;
        acc ^= splitmix64(&mut state);
    }
    acc
}

impl RngStream {
    pub fn new(seed: u64, role: Role, index: u64, purpose: Purpose) -> Self {
        Self {
            seed,
            id: StreamId {
                role,
                index,
                purpose,
                sub: 0,
            },
            counter: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn id(&self) -> StreamId {
        self.id
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// A child stream keyed by `tag`, independent of the parent and of every
    /// sibling with a different tag. The child starts at counter 0.
    pub fn substream(&self, tag: u64) -> RngStream {
        let mut id = self.id;
        id.sub = mix(&[self.id.sub, tag, 0x5EED]);
        RngStream {
            seed: self.seed,
            id,
            counter: 0,
        }
    }

    /// Generator for the current counter value; advances the counter.
    pub fn next_rng(&mut self) -> ChaCha8Rng {
        let key = [
            self.seed,
            self.id.role.code(),
            self.id.index,
            self.id.purpose.code(),
            self.id.sub,
        ];
        let mut state = mix(&key);
        let mut bytes = [0u8; 32];
        for chunk in bytes.chunks_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(bytes);
        rng.set_stream(self.counter);
        self.counter += 1;
        rng
    }

    /// One vector of i.i.d. standard normal entries.
    pub fn gaussian(&mut self, dim: usize) -> Result<Vec<f64>> {
        sample_standard_gaussian(dim, self)
    }
}

/// Draws `dim` i.i.d. N(0, 1) entries from `stream`, consuming one counter
/// step.
pub fn sample_standard_gaussian(dim: usize, stream: &mut RngStream) -> Result<Vec<f64>> {
    if dim == 0 {
        return Err(DtzoError::dim("gaussian sample", 1, 0));
    }
    let mut rng = stream.next_rng();
    Ok((0..dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect())
}
