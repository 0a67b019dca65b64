//! Deterministic seed streams.
//!
//! One master seed fans out into independent ChaCha8 streams, one per random
//! ingredient of an experiment, so changing e.g. the noise draw never
//! perturbs the signal or the operator. ChaCha8 with `set_stream` is stable
//! across platforms and releases, which keeps trajectories bit-reproducible.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Signal = 1,
    Noise = 2,
    Permutation = 3,
    Probe = 4,
    Extremes = 5,
}

/// RNG for one stream of a master seed.
pub fn stream_rng(master: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream as u64);
    rng
}

/// Derived 64-bit seed for components that take a seed rather than an RNG.
pub fn derived_seed(master: u64, stream: Stream) -> u64 {
    stream_rng(master, stream).random()
}
