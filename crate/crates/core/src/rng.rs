//! Hierarchical, splittable random streams.
//!
//! A [`SeedTree`] node is a 64-bit key. Children are derived by mixing the
//! parent key with a child index, so `run seed -> round -> chain` streams are
//! stable under changes to unrelated counts.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random generator used everywhere in the crate.
pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedTree(u64);

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SeedTree {
    pub fn new(seed: u64) -> Self {
        SeedTree(splitmix64(seed))
    }

    pub fn key(&self) -> u64 {
        self.0
    }

    pub fn child(&self, index: u64) -> SeedTree {
        SeedTree(splitmix64(self.0 ^ splitmix64(index.wrapping_add(0xA076_1D64_78BD_642F))))
    }

    /// Child keyed by a label, e.g. `"simulate"` or `"train"`.
    pub fn named(&self, label: &str) -> SeedTree {
        // FNV-1a
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in label.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        self.child(h)
    }

    pub fn rng(&self) -> Rng {
        Rng::seed_from_u64(self.0)
    }
}

/// Draws a fresh subtree from a running generator. Used to hand out
/// per-particle streams that do not depend on evaluation order.
pub fn fork(rng: &mut Rng) -> SeedTree {
    SeedTree(rng.next_u64())
}
