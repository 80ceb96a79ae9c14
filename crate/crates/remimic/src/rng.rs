//! Deterministic seed derivation.
//!
//! Every random stream in the system is a ChaCha8 generator whose seed is
//! derived from one root seed, a component tag, and an index. Independent
//! streams keep subsystems decoupled: e.g. drawing residual-policy noise never
//! perturbs the base policy's stream.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// 64-bit FNV-1a hash. Also used to fingerprint resolved configs in
/// artifacts, so its output must stay stable across releases.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(PRIME);
    }
    h
}

/// FNV-1a over the root seed, a tag, and an index.
fn hash_seed(root: u64, tag: &str, index: u64) -> u64 {
    let mut buf = Vec::with_capacity(16 + tag.len());
    buf.extend_from_slice(&root.to_le_bytes());
    buf.extend_from_slice(tag.as_bytes());
    buf.extend_from_slice(&index.to_le_bytes());
    fnv1a64(&buf)
}

/// Deterministic stream for `(root, tag, index)`.
pub fn stream(root: u64, tag: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(hash_seed(root, tag, index))
}
