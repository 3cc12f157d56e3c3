//! Named, hash-derived random streams.
//!
//! Every consumer of randomness gets its own stream seeded from
//! `(seed, purpose, index...)`, so adding or removing draws in one stream never
//! shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over the purpose label.
pub fn purpose_id(purpose: &str) -> u64 {
    purpose.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Order-sensitive mix of a list of words into one seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x243F_6A88_85A3_08D3, |acc, &p| {
        splitmix64(acc ^ splitmix64(p))
    })
}

pub fn stream(seed: u64, purpose: &str, index: u64) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(&[seed, purpose_id(purpose), index]))
}

pub fn stream_from(parts: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(parts))
}
