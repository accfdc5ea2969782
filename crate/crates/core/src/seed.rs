//! Seed splitting.
//!
//! Every random stream is derived from one 64-bit seed and a stage name:
//! the stream seed is the first eight bytes (little-endian) of
//! `SHA-256(seed.to_le_bytes() || stage_name)`. Streams are ChaCha8.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Stage names used by the pipeline.
pub const STAGE_PHANTOM: &str = "phantom";
pub const STAGE_KMEANS: &str = "kmeans";
pub const STAGE_CPDA_WEIGHTS: &str = "cpda-weights";

pub fn stage_seed(seed: u64, stage: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(stage.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn stage_rng(seed: u64, stage: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stage_seed(seed, stage))
}
