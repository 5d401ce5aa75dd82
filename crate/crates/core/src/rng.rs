//! Deterministic, named random streams.
//!
//! Each `(seed, stream)` pair maps to an independent ChaCha8 generator whose
//! 256-bit key is `SHA-256(seed as little-endian u64 || stream as UTF-8)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

/// Identifier of the stream derivation, recorded in run metadata.
pub const RNG_ALGORITHM: &str = "chacha8; key = sha256(seed_u64_le || stream_utf8)";

pub fn seeded_rng(seed: u64, stream: &str) -> StreamRng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(stream.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}
