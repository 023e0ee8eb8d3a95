//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! seeded from a 64-bit value mixed with a stable string hash, so results do
//! not depend on iteration order or on the standard library's hasher.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// 64-bit FNV-1a.
pub fn stable_hash(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// splitmix64 finalizer; spreads nearby seeds apart.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream for one document: `seed ⊕ hash(doc_id)`.
pub fn doc_rng(seed: u64, doc_id: &str) -> Rng {
    Rng::seed_from_u64(mix(seed ^ stable_hash(doc_id)))
}

/// Stream for a named purpose (initialization, batching, ...).
pub fn stream(seed: u64, purpose: &str, index: u64) -> Rng {
    Rng::seed_from_u64(mix(mix(seed ^ stable_hash(purpose)) ^ index))
}
