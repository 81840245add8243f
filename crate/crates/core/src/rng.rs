//! Keyed random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream addressed by
//! `(master_seed, run, particle, lane)` in the key and `iteration` in the
//! stream counter. Two draws with equal addresses are bitwise identical, and
//! no stream depends on how many other streams were consumed before it, so
//! particles and runs can be evaluated in any order or on any thread.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Sentinel particle index for draws shared by the whole ensemble.
pub const SHARED_PARTICLE: u64 = u64::MAX;

/// What a stream is used for. Components within a stream are drawn in order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u32)]
pub enum Lane {
    Init = 1,
    Oracle = 2,
    Diffusion = 3,
    Split = 4,
    Synthetic = 5,
    MonteCarlo = 6,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamId {
    pub run: u64,
    pub particle: u64,
    pub iteration: u64,
    pub lane: Lane,
}

impl StreamId {
    pub fn new(run: u64, particle: u64, iteration: u64, lane: Lane) -> Self {
        Self { run, particle, iteration, lane }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master_seed: u64,
    pub stream: StreamId,
}

impl SeedSpec {
    pub fn new(master_seed: u64, stream: StreamId) -> Self {
        Self { master_seed, stream }
    }

    /// Same master seed, different stream.
    pub fn with_stream(self, stream: StreamId) -> Self {
        Self { stream, ..self }
    }

    pub fn at(self, particle: u64, iteration: u64, lane: Lane) -> Self {
        self.with_stream(StreamId { particle, iteration, lane, ..self.stream })
    }

    pub fn rng(&self) -> ChaCha8Rng {
        stream_rng(self.master_seed, self.stream)
    }
}

pub fn stream_rng(master_seed: u64, id: StreamId) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&master_seed.to_le_bytes());
    key[8..16].copy_from_slice(&id.run.to_le_bytes());
    key[16..24].copy_from_slice(&id.particle.to_le_bytes());
    key[24..28].copy_from_slice(&(id.lane as u32).to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(id.iteration);
    rng
}
