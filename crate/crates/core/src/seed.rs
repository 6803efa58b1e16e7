//! Deterministic seed derivation.
//!
//! Every stochastic step (splits, trees, variational fits) draws from its own
//! ChaCha stream whose seed is derived from a master seed plus a key. The
//! derivation depends only on the key, so serial and parallel execution see
//! identical streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives a child seed from `master` and an ordered list of key parts.
pub fn derive_seed(master: u64, parts: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest is 32 bytes"))
}

/// Short hex fingerprint of arbitrary bytes (first 16 hex chars of SHA-256).
pub fn fingerprint(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}
