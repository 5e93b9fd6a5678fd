use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Seeded generator for the top-level stream of an operation.
pub(crate) fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `index` derived from `seed`. Used wherever work is
/// distributed (trees, folds, grid cells) so results do not depend on the
/// schedule.
pub(crate) fn substream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// A child seed for sub-task `index`, for APIs that take a plain seed.
pub(crate) fn derive_seed(seed: u64, index: u64) -> u64 {
    substream(seed, index).next_u64()
}
