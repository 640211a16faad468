//! Deterministic random streams.
//!
//! Every randomized component takes a `(seed, stream)` pair so parallel work
//! items draw from independent, order-free streams of one seeded generator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A ChaCha8 generator on stream `stream` of the given seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
