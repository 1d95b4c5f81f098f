//! Deterministic randomness: every party derives its own ChaCha20 stream from
//! the experiment seed and a label, so transcripts are reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

/// ChaCha20 stream keyed by `SHA-256(seed)`.
pub fn seeded_rng(seed: &[u8]) -> ChaCha20Rng {
    let key: [u8; 32] = Sha256::digest(seed).into();
    ChaCha20Rng::from_seed(key)
}

/// Domain-separated child seed, e.g. `derive_seed(b"run-7", "client/3")`.
pub fn derive_seed(base: &[u8], label: &str) -> Vec<u8> {
    let mut h = Sha256::new();
    h.update((base.len() as u64).to_be_bytes());
    h.update(base);
    h.update(label.as_bytes());
    h.finalize().to_vec()
}
