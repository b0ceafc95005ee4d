//! Shared fixtures for the criterion benches.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sof_core::instances::{random_instance, Instance, InstanceSpec};

/// A seeded `n`-state instance with `m = d = max(1, n/2)`.
pub fn instance(n: usize, seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = (n / 2).max(1);
    random_instance(&mut rng, &InstanceSpec::new(n, k, k)).expect("instance generation")
}
