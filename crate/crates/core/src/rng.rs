//! Counter-based RNG streams.
//!
//! Every random choice in the pipeline (locale splitting, masking, batch
//! shuffling, dropout) draws from a ChaCha8 stream keyed by the user seed
//! plus a stream tag and counters. This makes each stage a pure function of
//! its inputs: reruns and resumed training reproduce identical bytes.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STREAM_SPLIT: u64 = 1;
pub const STREAM_MASK: u64 = 2;
pub const STREAM_SHUFFLE: u64 = 3;
pub const STREAM_DROPOUT: u64 = 4;
pub const STREAM_INIT: u64 = 5;

/// A ChaCha8 generator keyed by `(seed, stream, a, b)`.
pub fn stream_rng(seed: u64, stream: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&stream.to_le_bytes());
    key[16..24].copy_from_slice(&a.to_le_bytes());
    key[24..32].copy_from_slice(&b.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// FNV-1a over a byte string, for folding strings into stream keys.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}
