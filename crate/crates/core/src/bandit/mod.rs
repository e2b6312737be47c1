//! Reward distributions, problem instances and the random instance generator.

mod file;
mod generator;
mod instance;
mod kl;

pub use file::{
    instance_from_str, instance_to_string, read_instance, write_instance, InstanceMetadata,
};
pub use generator::{generate_random_instance, InstanceGenConfig};
pub use instance::{
    argmax_lowest, derive_global_view, local_gaps, row_gaps, Gaps, GlobalView, LocalInstanceSet,
    RewardDist, TIE_TOLERANCE,
};
pub use kl::kl_bernoulli;
