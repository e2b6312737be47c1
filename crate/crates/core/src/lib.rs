//! Incentivized exploration with long-term strategic bandit agents.
//!
//! A principal wants to identify the best arm of a *global* game whose
//! means are the average of `M` agents' local games. Agents are α-UCB
//! learners who only care about their own reward. The principal watches
//! them for free during an observing phase, then pays unit bonuses to
//! steer exploration while eliminating arms with pooled confidence bounds.
//!
//! * [`bandit`]: instances, gaps, KL divergence and the random generator.
//! * [`agent`]: α-UCB agents and their responses to offers.
//! * [`principal`]: the observe-then-incentivize principal.
//! * [`sim`]: episodes, passive baseline and Monte Carlo batches.
//! * [`analysis`]: statistical checks and sweeps.
//! * [`report`]: CSV and JSON output.

pub mod agent;
pub mod analysis;
pub mod bandit;
pub mod error;
pub mod principal;
pub mod report;
pub mod seeding;
pub mod sim;

pub use agent::{AgentState, IncentiveBehavior, IncentiveOffer};
pub use bandit::{GlobalView, InstanceGenConfig, LocalInstanceSet, RewardDist};
pub use error::{Error, Result};
pub use principal::{CbVariant, KappaRule, Principal, PrincipalConfig};
pub use sim::{AggregateResult, BehaviorSpec, EpisodeTrace, Mode, SimConfig};
