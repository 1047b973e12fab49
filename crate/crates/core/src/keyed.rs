//! Keyed determinism primitives.
//!
//! Every random decision in the pipeline is drawn from a generator derived
//! from `(master seed, key)`. The derivation is SHA-256 over the seed's
//! little-endian bytes, a NUL separator and the UTF-8 key; the 32-byte digest
//! seeds a ChaCha8 stream. Keys are built from template ids and canonical
//! combination keys, so adding a combination never shifts another one's draws
//! and results do not depend on iteration order or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

fn keyed_digest(seed: u64, key: &str) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update([0u8]);
    hasher.update(key.as_bytes());
    hasher.finalize().into()
}

/// Deterministic generator for one `(seed, key)` pair.
pub fn keyed_rng(seed: u64, key: &str) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(keyed_digest(seed, key))
}

/// Uniform value in `[0, 1)` from the top 53 bits of the keyed digest.
pub fn keyed_unit(seed: u64, key: &str) -> f64 {
    let digest = keyed_digest(seed, key);
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    (u64::from_be_bytes(word) >> 11) as f64 / (1u64 << 53) as f64
}

/// Lowercase hex SHA-256 of a byte slice.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
