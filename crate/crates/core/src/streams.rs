//! Seed derivation for independent random streams.
//!
//! Every random draw in an experiment comes from a ChaCha8 generator seeded
//! by mixing `(master seed, sample size, trial index, purpose)` through
//! SplitMix64. Distinct keys give statistically independent streams, so
//! trials can be generated concurrently and in any order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// What a stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Train,
    Unlabeled,
    Test,
    Diagnostics,
    Custom(u64),
}

impl Purpose {
    fn code(self) -> u64 {
        match self {
            Purpose::Train => 0x7472_6169_6e00_0001,
            Purpose::Unlabeled => 0x756e_6c61_6200_0002,
            Purpose::Test => 0x7465_7374_0000_0003,
            Purpose::Diagnostics => 0x6469_6167_0000_0004,
            Purpose::Custom(c) => c.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ 0x6375_7374_0000_0005,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub n: u64,
    pub trial: u64,
    pub purpose: Purpose,
}

impl StreamKey {
    pub fn new(seed: u64, n: usize, trial: usize, purpose: Purpose) -> Self {
        StreamKey {
            seed,
            n: n as u64,
            trial: trial as u64,
            purpose,
        }
    }

    pub fn derive_seed(&self) -> u64 {
        let mut h = splitmix64(self.seed);
        for part in [self.n, self.trial, self.purpose.code()] {
            h = splitmix64(h ^ part);
        }
        h
    }

    pub fn rng(&self) -> StreamRng {
        StreamRng::seed_from_u64(self.derive_seed())
    }
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
