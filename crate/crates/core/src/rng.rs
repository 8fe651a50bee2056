//! Seeding. Every simulation draws from a ChaCha stream keyed by a 64-bit
//! seed and a purpose, so the covariate field, the design layout, the point
//! pattern and the observation process never share random numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Stream {
    Covariate = 1,
    Layout = 2,
    Pattern = 3,
    Observation = 4,
    Multistart = 5,
}

pub(crate) fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Seed of replicate `index` under a study's root seed.
pub fn replicate_seed(root: u64, index: usize) -> u64 {
    root ^ index as u64
}
