//! Deterministic counter-based random streams.
//!
//! Every stochastic component takes an explicit 64-bit seed. Parallel sweeps
//! derive one independent substream per (seed, trial index) pair, so results
//! do not depend on scheduling or worker count.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// A seeded random stream.
pub type Stream = ChaCha12Rng;

/// Root stream for a given experiment seed.
pub fn stream(seed: u64) -> Stream {
    ChaCha12Rng::seed_from_u64(seed)
}

/// Independent substream `index` of the experiment seed.
///
/// Uses the generator's 64-bit stream selector, so substreams with different
/// indices never overlap regardless of how much each one consumes.
pub fn substream(seed: u64, index: u64) -> Stream {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
