//! Fixtures shared by the benchmarks.

use oti_core::bandit::generate_random_instance;
use oti_core::seeding::rng_from_seed;
use oti_core::{InstanceGenConfig, LocalInstanceSet};

/// A generated instance with the default 30 arms and `agents` agents.
pub fn generated_instance(agents: usize, seed: u64) -> LocalInstanceSet {
    let cfg = InstanceGenConfig {
        agents,
        ..Default::default()
    };
    generate_random_instance(&cfg, &mut rng_from_seed(seed)).expect("default window is reachable")
}
