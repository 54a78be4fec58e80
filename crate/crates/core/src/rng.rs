//! Seed discipline.
//!
//! A master seed is split into named, indexable streams so that each
//! consumer (environment noise, action sampling, task sampling, GP
//! restarts, network initialisation) owns an independent generator. Adding
//! draws to one stream never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedStream(u64);

impl SeedStream {
    pub fn new(master: u64) -> Self {
        SeedStream(splitmix64(master))
    }

    /// Derive a named sub-stream.
    pub fn child(self, name: &str) -> Self {
        SeedStream(splitmix64(self.0 ^ fnv1a(name)))
    }

    /// Derive the `i`-th member of this stream.
    pub fn index(self, i: u64) -> Self {
        SeedStream(splitmix64(self.0.wrapping_add(splitmix64(i ^ 0x5851_F42D_4C95_7F2D))))
    }

    pub fn rng(self) -> Rng {
        Rng::seed_from_u64(self.0)
    }

    pub fn raw(self) -> u64 {
        self.0
    }
}
