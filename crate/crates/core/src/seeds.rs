//! Named seed derivation.
//!
//! Every random draw in the pipeline comes from a ChaCha8 stream whose seed
//! is a pure function of the master seed and a stage label, e.g.
//! `derive_seed(master, "explore/env3/shard0")`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type SimRng = ChaCha8Rng;

pub fn rng(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(word)
}

pub fn derived_rng(master: u64, label: &str) -> SimRng {
    rng(derive_seed(master, label))
}
