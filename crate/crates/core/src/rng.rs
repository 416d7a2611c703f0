//! Reproducible random streams.
//!
//! Every unit of parallel work (a replication, a bootstrap draw, a cohort
//! chunk) gets its own ChaCha stream derived from a master seed and a path
//! of indices, so results never depend on scheduling or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Mixes a seed with a sub-index (splitmix64 finalizer).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream `stream` of the generator keyed by `seed`.
pub fn stream(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Named sub-streams used by the simulation pipeline.
pub mod purpose {
    pub const COHORT: u64 = 1;
    pub const SAMPLING: u64 = 2;
    pub const TEMPLATES: u64 = 3;
    pub const BOOTSTRAP: u64 = 4;
}
