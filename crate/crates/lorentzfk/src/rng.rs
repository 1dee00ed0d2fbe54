//! Seed fan-out for reproducible parallel sampling.
//!
//! A single 64-bit experiment seed is expanded into independent ChaCha8
//! streams keyed by a stage label and a worker index. The derivation is
//! SHA-256(seed_le || 0x00 || label || 0x00 || index_le), so adding workers
//! to one stage never reshuffles the randomness of any other stage.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn derive_stream(seed: u64, label: &str, index: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update([0u8]);
    h.update(label.as_bytes());
    h.update([0u8]);
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}
