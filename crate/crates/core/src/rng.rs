//! Seed derivation.
//!
//! A run has one 64-bit master seed. Each consumer (parameter init, fold
//! assignment, batch shuffling, data synthesis) derives its own stream from
//! the master seed and a fixed consumer name, so adding a consumer never
//! shifts the randomness seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive the seed for a named consumer. FNV-1a over the name, mixed with the
/// master seed through SplitMix64.
pub fn derive_seed(master: u64, consumer: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in consumer.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(master ^ splitmix64(h))
}

pub fn rng_for(master: u64, consumer: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, consumer))
}
