//! Splittable seed derivation.
//!
//! One top-level seed fans out into independent, named sub-streams so that
//! changing how much randomness one component consumes never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags for the sub-seeds derived from a run seed.
pub mod tag {
    pub const STREAM: u64 = 1;
    pub const INIT: u64 = 2;
    pub const BATCHING: u64 = 3;
    pub const CALIBRATION: u64 = 4;
    pub const AUDIT: u64 = 5;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A node in the seed tree. Children are derived by hashing (parent, tag).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SeedTree(u64);

impl SeedTree {
    pub fn new(seed: u64) -> Self {
        SeedTree(seed)
    }

    pub fn value(self) -> u64 {
        self.0
    }

    pub fn child(self, tag: u64) -> Self {
        SeedTree(splitmix64(
            splitmix64(self.0) ^ tag.wrapping_mul(0xD605_BBB5_8C8A_BE1B),
        ))
    }

    pub fn path(self, tags: &[u64]) -> Self {
        tags.iter().fold(self, |node, &t| node.child(t))
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}
