//! Labeled sub-seed derivation.
//!
//! A run has one master seed. Every consumer of randomness (marginal noise,
//! projections, particle initialization, masks, queries) asks for its own
//! stream by label and index, so enabling one feature never shifts the
//! random numbers another feature sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives a 64-bit sub-seed from `(parent, label, index)`.
pub fn derive(parent: u64, label: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(parent.to_le_bytes());
    hasher.update((label.len() as u64).to_le_bytes());
    hasher.update(label.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Seeded generator for `(parent, label, index)`.
pub fn rng(parent: u64, label: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(parent, label, index))
}

/// Generator seeded directly from a 64-bit seed.
pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Named sub-seeds of a synthesis run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct RunSeeds {
    pub master: u64,
    pub noise: u64,
    pub scalar_noise: u64,
    pub projection_step: u64,
    pub init: u64,
    pub engine: u64,
    pub queries: u64,
    pub metrics: u64,
}

impl RunSeeds {
    pub fn from_master(master: u64) -> Self {
        RunSeeds {
            master,
            noise: derive(master, "noise", 0),
            scalar_noise: derive(master, "scalar-noise", 0),
            projection_step: derive(master, "projection-step", 0),
            init: derive(master, "init", 0),
            engine: derive(master, "engine", 0),
            queries: derive(master, "queries", 0),
            metrics: derive(master, "metrics", 0),
        }
    }
}
