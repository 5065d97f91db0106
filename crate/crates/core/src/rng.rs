//! Seed derivation for reproducible draws.
//!
//! Every stochastic decision in the simulator derives its generator from a
//! stable hash of named parts, so a draw depends only on what it is about and
//! never on how many draws happened before it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Incremental FNV-1a hasher with a splitmix finalizer.
#[derive(Debug, Clone, Copy)]
pub struct SeedHasher(u64);

impl Default for SeedHasher {
    fn default() -> Self {
        Self(FNV_OFFSET)
    }
}

impl SeedHasher {
    pub fn new(domain: &str) -> Self {
        Self::default().str(domain)
    }

    pub fn bytes(mut self, bytes: &[u8]) -> Self {
        for b in bytes {
            self.0 ^= u64::from(*b);
            self.0 = self.0.wrapping_mul(FNV_PRIME);
        }
        // field separator so ("ab","c") != ("a","bc")
        self.0 ^= 0xff;
        self.0 = self.0.wrapping_mul(FNV_PRIME);
        self
    }

    pub fn str(self, s: &str) -> Self {
        self.bytes(s.as_bytes())
    }

    pub fn u64(self, v: u64) -> Self {
        self.bytes(&v.to_le_bytes())
    }

    pub fn i64(self, v: i64) -> Self {
        self.bytes(&v.to_le_bytes())
    }

    pub fn finish(self) -> u64 {
        splitmix64(self.0)
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.finish())
    }

    /// Uniform draw in [0, 1).
    pub fn unit(self) -> f64 {
        (self.finish() >> 11) as f64 / (1u64 << 53) as f64
    }
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
