//! Named random sub-streams derived from one run seed.
//!
//! Each consumer (data generation, weight init, shuffling, k-means, ...) owns its
//! own ChaCha stream so toggling one stage never shifts the draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Data,
    Init,
    Shuffle,
    KMeans,
    Probe,
    Split,
    Baseline,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Data => 1,
            Stream::Init => 2,
            Stream::Shuffle => 3,
            Stream::KMeans => 4,
            Stream::Probe => 5,
            Stream::Split => 6,
            Stream::Baseline => 7,
        }
    }
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which.id());
    rng
}

/// A child generator for the `index`-th repetition of some sub-task (restart, run).
pub fn child(seed: u64, which: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(which.id() + 64 * (index + 1));
    rng
}
