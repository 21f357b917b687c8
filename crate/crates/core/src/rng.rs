//! Seeded random streams.
//!
//! Every stochastic component draws from ChaCha8 (`rand_chacha`), whose output
//! is specified independently of platform and word size. A run seed is split
//! into independent streams by selecting the ChaCha stream id, so e.g. the
//! weight initializer and the mask splitter never share state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type DreamRng = ChaCha8Rng;

/// Stream ids used across the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Noise = 2,
    SynthEdges = 3,
    SynthFeatures = 4,
    SynthMasks = 5,
    Test = 99,
}

pub fn stream(seed: u64, stream: Stream) -> DreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
