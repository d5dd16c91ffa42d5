//! Keyed random streams.
//!
//! Every stochastic step draws from a ChaCha stream whose seed is a SHA-256
//! digest of `(run seed, label parts...)`, so results do not depend on the
//! order in which worker threads pick up queries.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

/// Derive an independent stream for `(seed, parts...)`.
pub fn stream(seed: u64, parts: &[&str]) -> StreamRng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    for part in parts {
        // length prefix keeps ("ab","c") and ("a","bc") apart
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Split `n` child streams off a parent, in index order.
pub fn children(parent: &mut StreamRng, n: usize) -> Vec<StreamRng> {
    (0..n)
        .map(|_| ChaCha8Rng::seed_from_u64(parent.next_u64()))
        .collect()
}
