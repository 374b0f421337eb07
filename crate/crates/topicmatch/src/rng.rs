//! Seed plumbing: every random draw in the crate flows through a stream
//! derived from one master seed plus a list of purpose tags, so results do
//! not depend on call order between unrelated components.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a over a sequence of u64 words; used both for RNG stream derivation
/// and for config hashing.
pub fn fnv1a64(words: &[u64]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for w in words {
        for byte in w.to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}

/// FNV-1a over raw bytes.
pub fn fnv1a64_bytes(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Well-known purpose tags for derived streams.
pub mod tag {
    pub const INIT: u64 = 1;
    pub const DATA: u64 = 2;
    pub const TOPIC_SAMPLING: u64 = 3;
    pub const NEGATIVES: u64 = 4;
    pub const RANSAC: u64 = 5;
    pub const TEXTURE: u64 = 6;
    pub const WARP: u64 = 7;
    pub const JITTER: u64 = 8;
    pub const FINE_SUBSET: u64 = 9;
}

/// A counter-based stream: a fresh ChaCha generator keyed by the master seed
/// and the tag path. Same (seed, tags) always yields the same stream,
/// independent of what other streams were drawn before it.
pub fn stream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut words = Vec::with_capacity(tags.len() + 1);
    words.push(seed);
    words.extend_from_slice(tags);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a64(&words));
    rng
}
