//! Seed fan-out.
//!
//! A single user seed is turned into per-module, per-unit sub-seeds by hashing
//! `seed (8 bytes LE) || module name || 0x00 || unit key` with SHA-256 and
//! reading the first 8 bytes of the digest as a little-endian `u64`. Because
//! every unit of work (a day, a restart, a participant) gets its own stream,
//! the results do not depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// The RNG used everywhere in this crate.
pub type Rng = ChaCha8Rng;

pub fn derive_seed(seed: u64, module: &str, key: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(module.as_bytes());
    hasher.update([0u8]);
    hasher.update(key.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn rng_from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub fn derive_rng(seed: u64, module: &str, key: &str) -> Rng {
    rng_from_seed(derive_seed(seed, module, key))
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
