//! Deterministic RNG streams.
//!
//! Every source of randomness in the engine is a ChaCha8 stream addressed by
//! `(seed, stream)`. Training derives its per-step streams from the step
//! index instead of carrying RNG state forward, which makes checkpoint
//! resumption reproduce an uninterrupted run exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// RNG for a given seed and stream id.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream ids used by the trainer; kept in one place so resume logic and the
/// live loop can never disagree.
pub mod streams {
    /// Parameter initialization.
    pub const INIT: u64 = 0;
    /// Mini-batch index selection at a given step.
    pub fn batch(step: u64) -> u64 {
        1 + 2 * step
    }
    /// Augmentation draws at a given step.
    pub fn augment(step: u64) -> u64 {
        2 + 2 * step
    }
}
