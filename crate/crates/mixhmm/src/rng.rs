//! Seeded random number generation with explicit stream splitting.
//!
//! All randomness in the crate flows through ChaCha12, a counter-based
//! generator with 2^64 independent streams per seed. Parallel work items
//! (bootstrap replications, EM restarts, simulation batches) each derive
//! their own stream from `(seed, task_index)`, so results do not depend on
//! scheduling order and are bit-reproducible across runs.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Generator for the main (stream 0) sequence of a seed.
pub fn master(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

/// Independent generator for parallel task `index` under `seed`.
pub fn stream(seed: u64, index: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
