//! Keyed random substreams.
//!
//! Every draw gets its own ChaCha8 stream selected by a key path such as
//! `(seed, part, draw)`. The generator for a given key never depends on how
//! many other draws were made, so serial and parallel runs see identical
//! samples.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator used for every draw.
pub type DrawRng = ChaCha8Rng;

/// A node in the substream key tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Substreams {
    seed: u64,
}

impl Substreams {
    pub fn new(seed: u64) -> Self {
        Substreams { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derives an independent child key space.
    pub fn child(&self, key: u64) -> Substreams {
        Substreams { seed: splitmix64(self.seed ^ splitmix64(key.wrapping_add(0x5851_F42D_4C95_7F2D))) }
    }

    /// Generator for draw `index` under this key.
    pub fn rng(&self, index: u64) -> DrawRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        rng
    }
}

/// SplitMix64 finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
