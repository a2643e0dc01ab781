//! Seeded random streams.
//!
//! Every parallel loop in the crate derives one independent stream per work
//! item from `(seed, index)`, so results never depend on scheduling or on the
//! number of worker threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// The stream for work item `index` under `seed`.
pub fn substream(seed: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// A fresh seed for a nested family of substreams.
pub fn child_seed(seed: u64, index: u64) -> u64 {
    substream(seed, index).random()
}

pub fn seeded(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}
