//! Deterministic random streams.
//!
//! Every random object in an experiment is drawn from its own ChaCha8 generator
//! keyed by `(master_seed, stream, a, b)`. Distinct keys give independent
//! streams, so results do not depend on scheduling or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Labels separating the random sources of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Stream {
    Inputs = 1,
    Noise = 2,
    Shift = 3,
    Features = 4,
    TestInputs = 5,
    TestNoise = 6,
    Population = 7,
    Auxiliary = 8,
}

/// Builds the generator for one `(master_seed, stream, a, b)` key.
pub fn stream_rng(master_seed: u64, stream: Stream, a: u64, b: u64) -> StreamRng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&master_seed.to_le_bytes());
    key[8..16].copy_from_slice(&(stream as u64).to_le_bytes());
    key[16..24].copy_from_slice(&a.to_le_bytes());
    key[24..].copy_from_slice(&b.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}
