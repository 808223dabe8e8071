//! Deterministic rng substreams.
//!
//! Every randomized step derives its own stream from the global seed plus a
//! scope label (for example `chain/<seed_id>`), so per-seed results do not
//! depend on scheduling order and reruns reproduce byte-identical outputs.

use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;
use sha2::{Digest, Sha256};

/// Derive an independent rng stream for `scope` under the global seed.
pub fn derive_rng(global_seed: u64, scope: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(global_seed.to_le_bytes());
    hasher.update(scope.as_bytes());
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(seed)
}

/// Stable 64-bit hash of a sequence of byte strings, for deterministic
/// decisions keyed on content.
pub fn hash64(parts: &[&[u8]]) -> u64 {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}
