//! Labeled seed splitting.
//!
//! Every random stream in the engine is derived from one user seed plus a
//! label path, so adding a new consumer never shifts an existing stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives a child seed from `seed` and a label path.
pub fn derive(seed: u64, labels: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    for label in labels {
        hasher.update((label.len() as u64).to_le_bytes());
        hasher.update(label.as_bytes());
    }
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Same as [`derive`] with a trailing numeric label, e.g. a sample id.
pub fn derive_indexed(seed: u64, labels: &[&str], index: u64) -> u64 {
    let index = index.to_string();
    let mut all: Vec<&str> = labels.to_vec();
    all.push(&index);
    derive(seed, &all)
}

pub fn rng(seed: u64, labels: &[&str]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, labels))
}

pub fn rng_indexed(seed: u64, labels: &[&str], index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_indexed(seed, labels, index))
}
