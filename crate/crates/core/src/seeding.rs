//! Deterministic seed derivation.
//!
//! Every random stream in a simulation is addressed by a path of integers
//! below a single master seed: `master -> episode -> (agent, purpose)`.
//! Streams are ChaCha8 generators seeded from a SplitMix64-mixed hash of
//! that path, so results never depend on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used for every simulated random stream.
pub type SimRng = ChaCha8Rng;

/// Purpose tags separating the streams owned by one agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamTag {
    Reward = 1,
    Behavior = 2,
    Instance = 3,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes `parent` together with an ordered list of child indices.
pub fn derive_seed(parent: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(parent), |acc, &p| {
        splitmix64(acc ^ splitmix64(p))
    })
}

/// Seed of episode `index` under `master_seed`.
pub fn episode_seed(master_seed: u64, index: u64) -> u64 {
    derive_seed(master_seed, &[index])
}

/// Generator for one agent's stream of the given purpose.
pub fn agent_rng(episode_seed: u64, agent: usize, tag: StreamTag) -> SimRng {
    SimRng::seed_from_u64(derive_seed(episode_seed, &[agent as u64, tag as u64]))
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}
