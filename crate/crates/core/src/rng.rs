//! Deterministic random sub-streams derived from a run seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Derives an independent stream from `(seed, purpose, parts...)`.
///
/// The derivation hashes its inputs, so streams with different purposes or
/// parts are uncorrelated and stable across platforms.
pub fn stream(seed: u64, purpose: &str, parts: &[&[u8]]) -> Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((purpose.len() as u32).to_le_bytes());
    h.update(purpose.as_bytes());
    for p in parts {
        h.update((p.len() as u32).to_le_bytes());
        h.update(p);
    }
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Stream for the per-epoch patch grid of one case.
pub fn grid_stream(seed: u64, epoch: usize, case_id: &str) -> Rng {
    stream(seed, "grid", &[&(epoch as u64).to_le_bytes(), case_id.as_bytes()])
}

/// Stream for shuffling the training order in one epoch.
pub fn shuffle_stream(seed: u64, epoch: usize) -> Rng {
    stream(seed, "shuffle", &[&(epoch as u64).to_le_bytes()])
}

pub fn init_stream(seed: u64) -> Rng {
    stream(seed, "init", &[])
}
