//! Seeded randomness.
//!
//! Parameter initialization uses a named counter-based generator: every draw
//! is a pure function of (seed, name, counter), so two stores built from the
//! same spec and seed are element-wise identical regardless of construction
//! order. Stream-style randomness (batch sampling, noise injection, masks)
//! uses ChaCha keyed by (seed, name).

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Counter-based generator keyed by a seed and a name.
#[derive(Debug, Clone, Copy)]
pub struct NamedRng {
    key: u64,
}

impl NamedRng {
    pub fn new(seed: u64, name: &str) -> Self {
        NamedRng {
            key: splitmix64(seed ^ fnv1a(name.as_bytes())),
        }
    }

    /// The raw 64-bit output at a counter position.
    pub fn bits(&self, counter: u64) -> u64 {
        splitmix64(self.key ^ counter.wrapping_mul(GOLDEN))
    }

    /// Uniform draw in `[lo, hi)` at a counter position.
    pub fn uniform(&self, counter: u64, lo: f64, hi: f64) -> f64 {
        // 53 mantissa bits -> [0, 1)
        let u = (self.bits(counter) >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        lo + u * (hi - lo)
    }
}

/// Stream generator for a named purpose, derived from the same keying scheme.
pub fn stream(seed: u64, name: &str) -> ChaCha8Rng {
    let key = splitmix64(seed ^ fnv1a(name.as_bytes()));
    let mut seed_bytes = [0u8; 32];
    for (i, chunk) in seed_bytes.chunks_mut(8).enumerate() {
        chunk.copy_from_slice(&splitmix64(key.wrapping_add(i as u64)).to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed_bytes)
}
