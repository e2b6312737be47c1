use rand::distr::{Bernoulli, Distribution};
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};

/// Two means closer than this are treated as tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// A reward distribution supported on `[0, 1]`.
///
/// Only Bernoulli rewards are modelled.
#[derive(Debug, Clone, Copy)]
pub struct RewardDist {
    p: f64,
    draw: Bernoulli,
}

impl RewardDist {
    pub fn bernoulli(p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::DomainError {
                field: "p",
                value: p,
            });
        }
        let draw = Bernoulli::new(p).map_err(|_| Error::DomainError {
            field: "p",
            value: p,
        })?;
        Ok(Self { p, draw })
    }

    pub fn mean(&self) -> f64 {
        self.p
    }

    /// Draws one reward. Deterministic given the generator state.
    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.draw.sample(rng) {
            1.0
        } else {
            0.0
        }
    }
}

/// Gap vector of one bandit game under the convention that the best arm
/// carries the smallest positive gap.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Gaps {
    pub best_arm: usize,
    pub best_mean: f64,
    pub gaps: Vec<f64>,
    pub delta_min: f64,
}

/// Gaps of `values`, or the two tied arms when the maximum is not unique.
pub(crate) fn gaps_of(values: &[f64]) -> std::result::Result<Gaps, (usize, usize, f64)> {
    debug_assert!(values.len() >= 2);
    let best_arm = argmax_lowest(values);
    let best_mean = values[best_arm];
    if let Some(other) =
        (0..values.len()).find(|&k| k != best_arm && (best_mean - values[k]).abs() <= TIE_TOLERANCE)
    {
        let (a, b) = if other < best_arm {
            (other, best_arm)
        } else {
            (best_arm, other)
        };
        return Err((a, b, best_mean));
    }
    let mut gaps: Vec<f64> = values.iter().map(|v| best_mean - v).collect();
    let delta_min = gaps
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != best_arm)
        .map(|(_, &g)| g)
        .fold(f64::INFINITY, f64::min);
    gaps[best_arm] = delta_min;
    Ok(Gaps {
        best_arm,
        best_mean,
        gaps,
        delta_min,
    })
}

/// Index of the largest value, lowest index on ties.
#[inline]
pub fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// The global game seen by the principal.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GlobalView {
    pub global_means: Vec<f64>,
    pub k_star: usize,
    pub gaps: Vec<f64>,
    pub delta_min: f64,
}

/// Mean rewards of every agent's local game, stored row-major
/// (one row per agent).
#[derive(Debug, Clone, PartialEq)]
pub struct LocalInstanceSet {
    agents: usize,
    arms: usize,
    means: Vec<f64>,
    global: GlobalView,
}

impl LocalInstanceSet {
    /// Builds an instance from one row of arm means per agent.
    ///
    /// Rejects out-of-range means, ragged rows, tied local optima and a
    /// tied global optimum.
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let agents = rows.len();
        if agents == 0 {
            return Err(Error::InvalidInstance(
                "at least one agent is required".into(),
            ));
        }
        let arms = rows[0].len();
        if arms < 2 {
            return Err(Error::InvalidInstance(
                "at least two arms are required".into(),
            ));
        }
        let mut means = Vec::with_capacity(agents * arms);
        for (m, row) in rows.into_iter().enumerate() {
            if row.len() != arms {
                return Err(Error::InvalidInstance(format!(
                    "agent {} has {} arms, expected {arms}",
                    m + 1,
                    row.len()
                )));
            }
            for &mu in &row {
                if !(0.0..=1.0).contains(&mu) {
                    return Err(Error::DomainError {
                        field: "means",
                        value: mu,
                    });
                }
            }
            if let Err((a, b, v)) = gaps_of(&row) {
                return Err(Error::InvalidInstance(format!(
                    "agent {} has tied local optima on arms {} and {} ({v})",
                    m + 1,
                    a + 1,
                    b + 1
                )));
            }
            means.extend(row);
        }
        let global = global_view_of(&means, agents, arms)?;
        Ok(Self {
            agents,
            arms,
            means,
            global,
        })
    }

    /// The two-agent, three-arm instance with globally optimal arm 2 that
    /// neither agent prefers locally.
    pub fn toy() -> Self {
        Self::new(vec![vec![0.89, 0.47, 0.01], vec![0.01, 0.47, 0.89]])
            .expect("toy instance is valid")
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn arms(&self) -> usize {
        self.arms
    }

    #[inline]
    pub fn mean(&self, agent: usize, arm: usize) -> f64 {
        self.means[agent * self.arms + arm]
    }

    pub fn row(&self, agent: usize) -> &[f64] {
        &self.means[agent * self.arms..(agent + 1) * self.arms]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.means.chunks_exact(self.arms)
    }

    pub fn global_view(&self) -> &GlobalView {
        &self.global
    }

    /// Reward distributions in the same row-major layout as the means.
    pub fn reward_dists(&self) -> Vec<RewardDist> {
        self.means
            .iter()
            .map(|&p| RewardDist::bernoulli(p).expect("validated mean"))
            .collect()
    }
}

fn global_view_of(means: &[f64], agents: usize, arms: usize) -> Result<GlobalView> {
    let mut sums = vec![0.0; arms];
    for row in means.chunks_exact(arms) {
        for (s, &mu) in sums.iter_mut().zip(row) {
            *s += mu;
        }
    }
    let global_means: Vec<f64> = sums.into_iter().map(|s| s / agents as f64).collect();
    let gaps =
        gaps_of(&global_means).map_err(|(first, second, value)| Error::NonUniqueOptimum {
            first,
            second,
            value,
        })?;
    Ok(GlobalView {
        global_means,
        k_star: gaps.best_arm,
        gaps: gaps.gaps,
        delta_min: gaps.delta_min,
    })
}

/// Column averages, global optimum and global gaps of `inst`.
pub fn derive_global_view(inst: &LocalInstanceSet) -> Result<GlobalView> {
    global_view_of(&inst.means, inst.agents, inst.arms)
}

/// Local gaps of agent `agent`, including the best arm's `delta_min` entry.
pub fn local_gaps(inst: &LocalInstanceSet, agent: usize) -> Result<Gaps> {
    if agent >= inst.agents {
        return Err(Error::InvalidInstance(format!(
            "agent index {agent} out of range"
        )));
    }
    row_gaps(inst.row(agent))
}

/// Gaps of a single local game given as a row of means.
pub fn row_gaps(row: &[f64]) -> Result<Gaps> {
    if row.len() < 2 {
        return Err(Error::InvalidInstance(
            "at least two arms are required".into(),
        ));
    }
    gaps_of(row).map_err(|(a, b, v)| {
        Error::InvalidInstance(format!("tied optima on arms {} and {} ({v})", a + 1, b + 1))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::rng_from_seed;
    use approx::assert_abs_diff_eq;

    #[test]
    fn degenerate_bernoulli_draws() {
        let mut rng = rng_from_seed(3);
        let zero = RewardDist::bernoulli(0.0).unwrap();
        let one = RewardDist::bernoulli(1.0).unwrap();
        for _ in 0..10_000 {
            assert_eq!(zero.sample(&mut rng), 0.0);
            assert_eq!(one.sample(&mut rng), 1.0);
        }
    }

    #[test]
    fn bernoulli_mean_converges() {
        let dist = RewardDist::bernoulli(0.47).unwrap();
        let mut rng = rng_from_seed(11);
        let n = 1_000_000;
        let ones = (0..n).filter(|_| dist.sample(&mut rng) == 1.0).count();
        let mean = ones as f64 / n as f64;
        assert!((mean - 0.47).abs() <= 0.002, "sample mean {mean}");
    }

    #[test]
    fn bernoulli_rejects_out_of_range() {
        assert!(RewardDist::bernoulli(1.5).is_err());
        assert!(RewardDist::bernoulli(-0.1).is_err());
        assert!(RewardDist::bernoulli(f64::NAN).is_err());
    }

    #[test]
    fn toy_global_view() {
        let view = LocalInstanceSet::toy().global_view().clone();
        assert_abs_diff_eq!(view.global_means[0], 0.45, epsilon = 1e-12);
        assert_abs_diff_eq!(view.global_means[1], 0.47, epsilon = 1e-12);
        assert_abs_diff_eq!(view.global_means[2], 0.45, epsilon = 1e-12);
        assert_eq!(view.k_star, 1);
        assert_abs_diff_eq!(view.delta_min, 0.02, epsilon = 1e-12);
        assert_abs_diff_eq!(view.gaps[1], 0.02, epsilon = 1e-12);
    }

    #[test]
    fn single_agent_view_is_the_row() {
        let inst = LocalInstanceSet::new(vec![vec![0.3, 0.7, 0.1]]).unwrap();
        assert_eq!(inst.global_view().global_means, vec![0.3, 0.7, 0.1]);
    }

    #[test]
    fn two_agent_gaps_follow_min_convention() {
        let inst = LocalInstanceSet::new(vec![vec![0.6, 0.2], vec![0.2, 0.4]]).unwrap();
        let view = derive_global_view(&inst).unwrap();
        assert_abs_diff_eq!(view.global_means[0], 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(view.global_means[1], 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(view.gaps[0], 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(view.gaps[1], 0.1, epsilon = 1e-12);
    }

    #[test]
    fn tied_global_optimum_is_rejected() {
        let err = LocalInstanceSet::new(vec![vec![0.6, 0.2], vec![0.2, 0.6]]).unwrap_err();
        assert!(matches!(
            err,
            Error::NonUniqueOptimum {
                first: 0,
                second: 1,
                ..
            }
        ));
    }

    #[test]
    fn tied_local_optimum_is_rejected() {
        assert!(LocalInstanceSet::new(vec![vec![0.5, 0.5, 0.1]]).is_err());
    }

    #[test]
    fn local_gaps_examples() {
        let toy = LocalInstanceSet::toy();
        let g = local_gaps(&toy, 0).unwrap();
        assert_eq!(g.best_arm, 0);
        assert_abs_diff_eq!(g.gaps[0], 0.42, epsilon = 1e-12);
        assert_abs_diff_eq!(g.gaps[1], 0.42, epsilon = 1e-12);
        assert_abs_diff_eq!(g.gaps[2], 0.88, epsilon = 1e-12);
        assert_abs_diff_eq!(g.delta_min, 0.42, epsilon = 1e-12);

        let g = row_gaps(&[0.5, 0.4]).unwrap();
        assert_abs_diff_eq!(g.gaps[0], 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(g.gaps[1], 0.1, epsilon = 1e-12);

        assert_eq!(row_gaps(&[1.0, 0.0]).unwrap().gaps, vec![1.0, 1.0]);
        assert!(local_gaps(&toy, 2).is_err());
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax_lowest(&[0.3, 0.3, 0.1]), 0);
        assert_eq!(argmax_lowest(&[0.1, 0.3, 0.3]), 1);
        assert_eq!(argmax_lowest(&[f64::INFINITY, f64::INFINITY]), 0);
    }
}
