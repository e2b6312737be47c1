//! Strategic agents: α-UCB learners that respond to incentive offers.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bandit::RewardDist;
use crate::error::{Error, Result};

/// Bonus paid for pulling an incentivized arm.
pub const BONUS: f64 = 1.0;

/// How an agent reacts when offered an incentive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IncentiveBehavior {
    /// Takes every offer.
    AlwaysFollow,
    /// Takes each offer independently with probability `p_follow`.
    StochasticFollow { p_follow: f64 },
    /// Declines offers made at the listed (1-based) local steps.
    ScriptedRefuser { refuse_at: BTreeSet<u64> },
}

impl IncentiveBehavior {
    pub fn validate(&self) -> Result<()> {
        match self {
            IncentiveBehavior::StochasticFollow { p_follow } if !(0.0..=1.0).contains(p_follow) => {
                Err(Error::DomainError {
                    field: "p_follow",
                    value: *p_follow,
                })
            }
            _ => Ok(()),
        }
    }
}

/// The incentive offered to one agent at one step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct IncentiveOffer {
    pub arm: Option<usize>,
}

impl IncentiveOffer {
    pub const NONE: IncentiveOffer = IncentiveOffer { arm: None };

    pub fn on(arm: usize) -> Self {
        Self { arm: Some(arm) }
    }

    pub fn bonus(&self) -> f64 {
        if self.arm.is_some() {
            BONUS
        } else {
            0.0
        }
    }
}

/// The arm an agent pulls and whether it honoured the offer on the table.
///
/// `followed` is vacuously true when nothing was offered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Action {
    pub arm: usize,
    pub followed: bool,
}

/// α-UCB exploration index. Unpulled arms get `+inf`.
pub fn ucb_index(mean: f64, n: u64, t: u64, alpha: f64) -> f64 {
    if n == 0 {
        return f64::INFINITY;
    }
    mean + (alpha * (t as f64).ln() / n as f64).sqrt()
}

/// Running-mean update shared by agents and the principal so that both
/// records stay bit-identical.
#[inline]
pub(crate) fn running_mean(mean: f64, count_after: u64, x: f64) -> f64 {
    mean + (x - mean) / count_after as f64
}

/// One agent's private learning state. The horizon is deliberately absent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pulls: Vec<u64>,
    means: Vec<f64>,
    // sqrt(alpha / pulls[k]); the index is means[k] + scale[k] * sqrt(ln t).
    scale: Vec<f64>,
    t_local: u64,
    alpha: f64,
    behavior: IncentiveBehavior,
    ever_refused: bool,
}

impl AgentState {
    pub fn new(arms: usize, alpha: f64, behavior: IncentiveBehavior) -> Self {
        assert!(arms >= 1, "an agent needs at least one arm");
        Self {
            pulls: vec![0; arms],
            means: vec![0.0; arms],
            scale: vec![f64::INFINITY; arms],
            t_local: 0,
            alpha,
            behavior,
            ever_refused: false,
        }
    }

    pub fn arms(&self) -> usize {
        self.pulls.len()
    }

    pub fn pulls(&self) -> &[u64] {
        &self.pulls
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn t_local(&self) -> u64 {
        self.t_local
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn behavior(&self) -> &IncentiveBehavior {
        &self.behavior
    }

    pub fn ever_refused(&self) -> bool {
        self.ever_refused
    }

    /// The arm α-UCB would pull at the next step, lowest index on ties.
    pub fn ucb_choice(&self) -> usize {
        if let Some(k) = self.pulls.iter().position(|&n| n == 0) {
            return k;
        }
        let root_log = ((self.t_local + 1) as f64).ln().sqrt();
        let mut best = 0;
        let mut best_index = self.means[0] + self.scale[0] * root_log;
        for k in 1..self.means.len() {
            let index = self.means[k] + self.scale[k] * root_log;
            if index > best_index {
                best = k;
                best_index = index;
            }
        }
        best
    }

    fn accepts<R: Rng + ?Sized>(&self, rng: &mut R) -> bool {
        match &self.behavior {
            IncentiveBehavior::AlwaysFollow => true,
            IncentiveBehavior::StochasticFollow { p_follow } => rng.random::<f64>() < *p_follow,
            IncentiveBehavior::ScriptedRefuser { refuse_at } => {
                !refuse_at.contains(&(self.t_local + 1))
            }
        }
    }

    /// Chooses the arm for the next step given the current offer.
    ///
    /// `rng` is only consulted when an offer is present and the behavior is
    /// stochastic. A declining agent plays its α-UCB arm; the offer counts
    /// as followed only if that arm happens to be the offered one.
    pub fn act<R: Rng + ?Sized>(&mut self, offer: IncentiveOffer, rng: &mut R) -> Action {
        match offer.arm {
            None => Action {
                arm: self.ucb_choice(),
                followed: true,
            },
            Some(k) if self.accepts(rng) => Action {
                arm: k,
                followed: true,
            },
            Some(k) => {
                let arm = self.ucb_choice();
                let followed = arm == k;
                self.ever_refused |= !followed;
                Action { arm, followed }
            }
        }
    }

    /// Records the reward obtained from `arm`.
    pub fn update(&mut self, arm: usize, reward: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&reward) {
            return Err(Error::RewardOutOfRange(reward));
        }
        let n = self.pulls[arm] + 1;
        self.pulls[arm] = n;
        self.means[arm] = running_mean(self.means[arm], n, reward);
        self.scale[arm] = (self.alpha / n as f64).sqrt();
        self.t_local += 1;
        Ok(())
    }
}

/// One step of an agent's income: raw reward plus any bonus actually paid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepIncome {
    pub reward: f64,
    pub bonus: f64,
}

/// Cumulative reward R_m(T): raw rewards plus received bonuses.
pub fn cumulative_reward<I: IntoIterator<Item = StepIncome>>(log: I) -> f64 {
    log.into_iter().map(|s| s.reward + s.bonus).sum()
}

/// Runs α-UCB on one local game with no principal for `steps` steps.
pub fn run_standalone_ucb<R: Rng + ?Sized>(
    dists: &[RewardDist],
    alpha: f64,
    steps: u64,
    rng: &mut R,
) -> AgentState {
    let mut agent = AgentState::new(dists.len(), alpha, IncentiveBehavior::AlwaysFollow);
    for _ in 0..steps {
        let arm = agent.ucb_choice();
        let x = dists[arm].sample(rng);
        agent
            .update(arm, x)
            .expect("bernoulli rewards lie in [0, 1]");
    }
    agent
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::rng_from_seed;
    use approx::assert_abs_diff_eq;

    fn agent_with(pulls: &[u64], means: &[f64], alpha: f64) -> AgentState {
        let mut a = AgentState::new(pulls.len(), alpha, IncentiveBehavior::AlwaysFollow);
        for (k, (&n, &mu)) in pulls.iter().zip(means).enumerate() {
            a.pulls[k] = n;
            a.means[k] = mu;
            a.scale[k] = if n == 0 {
                f64::INFINITY
            } else {
                (alpha / n as f64).sqrt()
            };
            a.t_local += n;
        }
        a
    }

    #[test]
    fn offered_arm_is_taken_by_compliant_agent() {
        let mut a = agent_with(&[3, 3, 3, 3], &[0.9, 0.1, 0.1, 0.1], 2.0);
        let act = a.act(IncentiveOffer::on(2), &mut rng_from_seed(0));
        assert_eq!(
            act,
            Action {
                arm: 2,
                followed: true
            }
        );
    }

    #[test]
    fn ucb_hand_evaluation() {
        // 0.9 + sqrt(2 ln 3) = 2.3823 beats 0.1 + sqrt(2 ln 3) = 1.5823.
        let a = agent_with(&[1, 1], &[0.9, 0.1], 2.0);
        assert_eq!(a.t_local(), 2);
        assert_eq!(a.ucb_choice(), 0);
        assert_abs_diff_eq!(
            ucb_index(0.9, 1, 3, 2.0),
            2.382_303_807_367_511,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            ucb_index(0.1, 1, 3, 2.0),
            1.582_303_807_367_511,
            epsilon = 1e-12
        );
    }

    #[test]
    fn unpulled_arm_takes_priority() {
        let a = agent_with(&[0, 5], &[0.0, 1.0], 2.0);
        assert_eq!(a.ucb_choice(), 0);
        let a = agent_with(&[4, 0, 0], &[1.0, 0.0, 0.0], 2.0);
        assert_eq!(a.ucb_choice(), 1);
    }

    #[test]
    fn exact_ties_go_to_lowest_index() {
        let a = agent_with(&[7, 7, 7], &[0.4, 0.4, 0.4], 2.0);
        assert_eq!(a.ucb_choice(), 0);
        let a = agent_with(&[7, 5, 5], &[0.1, 0.6, 0.6], 2.0);
        assert_eq!(a.ucb_choice(), 1);
    }

    #[test]
    fn ucb_index_contract() {
        assert_eq!(ucb_index(0.3, 0, 10, 2.0), f64::INFINITY);
        assert_abs_diff_eq!(ucb_index(0.0, 1, 1, 2.0), 0.0);
        // t = e gives ln t = 1.
        let t_e = std::f64::consts::E;
        assert_abs_diff_eq!(
            0.0 + (2.0 * t_e.ln() / 1.0f64).sqrt(),
            std::f64::consts::SQRT_2,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(ucb_index(0.5, 1 << 50, 100, 2.0), 0.5, epsilon = 1e-6);
    }

    #[test]
    fn incremental_means() {
        let mut a = AgentState::new(2, 2.0, IncentiveBehavior::AlwaysFollow);
        a.update(0, 0.7).unwrap();
        assert_eq!((a.pulls()[0], a.means()[0]), (1, 0.7));

        let mut a = agent_with(&[4, 0], &[0.5, 0.0], 2.0);
        a.update(0, 1.0).unwrap();
        assert_eq!(a.pulls()[0], 5);
        assert_abs_diff_eq!(a.means()[0], 0.6, epsilon = 1e-15);

        let mut a = AgentState::new(1, 2.0, IncentiveBehavior::AlwaysFollow);
        for x in [0.0, 1.0, 0.0, 1.0] {
            a.update(0, x).unwrap();
        }
        assert_eq!(a.means()[0], 0.5);
        assert_eq!(a.t_local(), 4);
    }

    #[test]
    fn out_of_range_reward_is_rejected() {
        let mut a = AgentState::new(2, 2.0, IncentiveBehavior::AlwaysFollow);
        assert_eq!(a.update(0, 1.5), Err(Error::RewardOutOfRange(1.5)));
        assert_eq!(a.t_local(), 0);
    }

    #[test]
    fn scripted_refuser_declines_on_schedule() {
        let behavior = IncentiveBehavior::ScriptedRefuser {
            refuse_at: [3].into(),
        };
        let mut a = AgentState::new(2, 2.0, behavior);
        let mut rng = rng_from_seed(0);
        a.update(0, 1.0).unwrap();
        a.update(1, 0.0).unwrap();
        // Step 3: UCB prefers arm 0, offer on arm 1 is declined.
        let act = a.act(IncentiveOffer::on(1), &mut rng);
        assert_eq!(
            act,
            Action {
                arm: 0,
                followed: false
            }
        );
        assert!(a.ever_refused());
        a.update(0, 1.0).unwrap();
        let act = a.act(IncentiveOffer::on(1), &mut rng);
        assert_eq!(
            act,
            Action {
                arm: 1,
                followed: true
            }
        );
    }

    #[test]
    fn stochastic_follow_rate() {
        let mut a = agent_with(&[5, 5], &[0.9, 0.1], 2.0);
        a.behavior = IncentiveBehavior::StochasticFollow { p_follow: 0.8 };
        let mut rng = rng_from_seed(9);
        let n = 100_000;
        let taken = (0..n)
            .filter(|_| a.act(IncentiveOffer::on(1), &mut rng).followed)
            .count();
        let rate = taken as f64 / n as f64;
        assert!((rate - 0.8).abs() < 0.006, "{rate}");
    }

    #[test]
    fn determinism_given_seed() {
        let mk = || {
            let mut a = agent_with(&[5, 5], &[0.5, 0.4], 2.0);
            a.behavior = IncentiveBehavior::StochasticFollow { p_follow: 0.5 };
            a
        };
        let (mut a, mut b) = (mk(), mk());
        let (mut ra, mut rb) = (rng_from_seed(4), rng_from_seed(4));
        for _ in 0..100 {
            assert_eq!(
                a.act(IncentiveOffer::on(1), &mut ra),
                b.act(IncentiveOffer::on(1), &mut rb)
            );
        }
    }

    #[test]
    fn cumulative_reward_counts_paid_bonuses_only() {
        let plain = (0..42).map(|_| StepIncome {
            reward: 1.0,
            bonus: 0.0,
        });
        assert_eq!(cumulative_reward(plain), 42.0);
        let mut log: Vec<StepIncome> = (0..10)
            .map(|_| StepIncome {
                reward: 1.0,
                bonus: 0.0,
            })
            .collect();
        for s in log.iter_mut().take(3) {
            s.bonus = BONUS;
        }
        assert_eq!(cumulative_reward(log.iter().copied()), 13.0);
        // A declined offer pays nothing.
        assert_eq!(
            cumulative_reward([StepIncome {
                reward: 0.5,
                bonus: 0.0
            }]),
            0.5
        );
    }

    #[test]
    fn suboptimal_arm_is_rarely_pulled() {
        // Delta = 0.3, 10^4 steps, 200 runs.
        let dists = [
            RewardDist::bernoulli(0.7).unwrap(),
            RewardDist::bernoulli(0.4).unwrap(),
        ];
        let total: u64 = (0..200)
            .map(|r| run_standalone_ucb(&dists, 2.0, 10_000, &mut rng_from_seed(r)).pulls()[1])
            .sum();
        let frac = total as f64 / (200.0 * 10_000.0);
        assert!(frac < 0.10, "suboptimal fraction {frac}");
    }
}
