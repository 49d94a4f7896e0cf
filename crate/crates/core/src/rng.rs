//! Seed derivation. A run has a single 64-bit root seed; every stochastic
//! component draws from its own named ChaCha stream so it can be
//! reproduced in isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Dataset = 1,
    Init = 2,
    Dropout = 3,
    Batch = 4,
}

/// Child generator for `stream` under `root`.
pub fn stream(root: u64, stream: Stream) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(stream as u64);
    rng
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic child seed from a root seed and a sequence of labels.
pub fn derive_seed(root: u64, labels: &[u64]) -> u64 {
    labels.iter().fold(mix64(root), |acc, &l| mix64(acc ^ mix64(l)))
}
