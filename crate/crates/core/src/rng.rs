//! Seeded sub-stream derivation. All randomness in a run flows from one root
//! seed; each component draws from a named stream so that changing how one
//! component consumes randomness does not perturb the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a over a byte slice. Used for stream labels and stable content hashes.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derive an independent RNG stream from a root seed and a label.
pub fn substream(seed: u64, label: &str) -> ChaCha8Rng {
    let mut h = fnv1a64(label.as_bytes());
    h ^= seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    ChaCha8Rng::seed_from_u64(h)
}

/// Derive a stream indexed by an integer, e.g. one stream per epoch or scene.
pub fn substream_indexed(seed: u64, label: &str, index: u64) -> ChaCha8Rng {
    let mut h = fnv1a64(label.as_bytes());
    h = h.wrapping_mul(0x100_0000_01b3).wrapping_add(index);
    h ^= seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    ChaCha8Rng::seed_from_u64(h)
}
