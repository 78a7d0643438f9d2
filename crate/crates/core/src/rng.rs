//! Seeded random streams.
//!
//! All randomness in a run descends from one root seed. Each subsystem asks
//! for a named substream (`"rollout"`, `"noise"`, `"init"`, ...) plus an index,
//! so reseeding one subsystem never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Rng = ChaCha8Rng;

/// Root of the named-substream tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Streams {
    root: u64,
}

impl Streams {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    /// Independent stream for `(name, index)`.
    pub fn stream(&self, name: &str, index: u64) -> Rng {
        let mut h = splitmix(self.root ^ 0x6a09_e667_f3bc_c908);
        for b in name.bytes() {
            h = splitmix(h ^ u64::from(b));
        }
        h = splitmix(h ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        ChaCha8Rng::seed_from_u64(h)
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

#[inline]
pub fn std_normal<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}
