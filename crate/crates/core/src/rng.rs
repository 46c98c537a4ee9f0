//! Seeded generator streams.
//!
//! Every random quantity in an experiment comes from a ChaCha8 generator keyed
//! by the experiment seed. Independent consumers (Lloyd restarts, Monte Carlo
//! trials, validation draws) get their own stream number so results do not
//! depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream offsets reserved for the different consumers of one seed.
pub mod streams {
    pub const TRAINING: u64 = 1;
    pub const LLOYD: u64 = 1 << 20;
    pub const VALIDATION: u64 = 2 << 20;
    pub const EVALUATION: u64 = 3 << 20;
    pub const ONED: u64 = 4 << 20;
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator for stream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
