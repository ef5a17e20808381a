//! Seeding helpers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The random number generator every sampler in the crate consumes.
pub type RandomSource = ChaCha8Rng;

/// Returns the generator for replica `index` of a run seeded by `master_seed`.
///
/// Each replica gets its own ChaCha stream, so results never depend on the
/// order in which replicas are executed.
pub fn replica_rng(master_seed: u64, index: u64) -> RandomSource {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// Derives an independent generator from `rng` for a sub-task.
pub fn fork(rng: &mut RandomSource, lane: u64) -> RandomSource {
    let mut child = ChaCha8Rng::from_seed(rand::Rng::random(rng));
    child.set_stream(lane);
    child
}
