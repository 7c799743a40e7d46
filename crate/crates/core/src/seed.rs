//! Deterministic seed derivation.
//!
//! Every random stream in the engine is keyed by a master seed plus a small
//! tuple of stream identifiers, so that parallel work produces identical
//! results regardless of scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `master` and a sequence of stream ids.
pub fn derive_seed(master: u64, stream: &[u64]) -> u64 {
    stream.iter().fold(mix(master), |acc, &s| mix(acc ^ mix(s)))
}

pub(crate) fn rng(master: u64, stream: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, stream))
}

// Stream tags keep unrelated consumers of one master seed apart.
pub(crate) const STREAM_SAMPLE: u64 = 1;
pub(crate) const STREAM_BOOTSTRAP: u64 = 2;
pub(crate) const STREAM_INIT: u64 = 3;
pub(crate) const STREAM_PILOT: u64 = 4;
pub(crate) const STREAM_GENERATE: u64 = 5;
pub(crate) const STREAM_CONFIDENCE: u64 = 6;
