//! Seed derivation for independent, schedule-free RNG streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive a 64-bit seed from a root seed and a list of labelled parts.
///
/// The same inputs always produce the same seed, regardless of which worker
/// asks for it or in which order.
pub fn derive(root: u64, parts: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Seed used by the sweep to draw the ratio-`r` training subsample for a run seed.
pub fn subsample_seed(run_seed: u64, ratio_percent: f64) -> u64 {
    derive(run_seed, &["subsample", &format!("{ratio_percent}")])
}
