//! Named random streams.
//!
//! Every consumer of randomness derives its own generator from
//! `(master seed, tag, replicate, dimension)`, so a task's draws do not depend
//! on which thread runs it or in what order the tasks finish.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used throughout the crate.
pub type StreamRng = ChaCha8Rng;

/// Identifies one random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub master_seed: u64,
    pub tag: u64,
    pub replicate: u64,
    pub dimension: u64,
}

impl StreamKey {
    pub fn new(master_seed: u64, tag: u64, replicate: u64, dimension: u64) -> Self {
        Self {
            master_seed,
            tag,
            replicate,
            dimension,
        }
    }

    /// 64-bit digest of the key; reported as `seed_used` in experiment records.
    pub fn seed(&self) -> u64 {
        let mut state = self.master_seed;
        for word in [self.tag, self.replicate, self.dimension] {
            state = splitmix64(state ^ splitmix64(word));
        }
        state
    }

    pub fn rng(&self) -> StreamRng {
        let mut state = self.seed();
        let mut bytes = [0u8; 32];
        for chunk in bytes.chunks_exact_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        StreamRng::from_seed(bytes)
    }
}

/// Stable tag for a human-readable stream name (FNV-1a).
pub fn tag(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Generator seeded directly from a single integer.
pub fn seeded(seed: u64) -> StreamRng {
    StreamKey::new(seed, 0, 0, 0).rng()
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
