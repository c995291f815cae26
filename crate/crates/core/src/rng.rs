//! Reproducible parallel random streams.
//!
//! Streams are ChaCha8 instances (a counter-mode stream cipher) keyed by
//! `(seed, batch, index)`.  Distinct key tuples give independent streams with
//! no coordination, so Monte Carlo work can be split across workers while
//! every path sees exactly the same randomness regardless of batch layout.

use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

/// Derives the stream for path `index` of batch `batch` under `seed`.
pub fn stream(seed: u64, batch: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&batch.to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    key[24..32].copy_from_slice(b"superprc");
    ChaCha8Rng::from_seed(key)
}

/// Stream for single-shot (non-batched) use.
pub fn single(seed: u64) -> ChaCha8Rng {
    stream(seed, 0, 0)
}
