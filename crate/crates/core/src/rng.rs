//! Portable, seedable random streams.
//!
//! Every generated instance draws from its own ChaCha8 stream selected by
//! `(seed, index)`, so instance `i` is the same no matter how many instances
//! were drawn before it or which worker draws it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type TaskRng = ChaCha8Rng;

/// RNG for instance `index` of the run seeded with `seed`.
pub fn instance_rng(seed: u64, index: u64) -> TaskRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// RNG for one-off uses such as parameter initialisation.
pub fn seeded(seed: u64) -> TaskRng {
    ChaCha8Rng::seed_from_u64(seed)
}
