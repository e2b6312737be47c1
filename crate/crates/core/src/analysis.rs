//! Statistical checks of the mechanism's guarantees and the experiment sweeps.

use rayon::prelude::*;
use serde::Serialize;

use crate::agent::{run_standalone_ucb, IncentiveBehavior};
use crate::bandit::{
    generate_random_instance, kl_bernoulli, row_gaps, InstanceGenConfig, LocalInstanceSet,
    RewardDist,
};
use crate::error::{Error, Result};
use crate::seeding::{agent_rng, derive_seed, episode_seed, rng_from_seed, StreamTag};
use crate::sim::{
    run_episode_with, run_monte_carlo, AggregateResult, BehaviorSpec, EpisodeTrace, Mode, SimConfig,
};

/// Outcome of a single pass/fail check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub check: String,
    pub statistic: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl Verdict {
    pub fn at_least(check: impl Into<String>, statistic: f64, threshold: f64) -> Self {
        Self {
            check: check.into(),
            statistic,
            threshold,
            pass: statistic >= threshold,
        }
    }

    pub fn at_most(check: impl Into<String>, statistic: f64, threshold: f64) -> Self {
        Self {
            check: check.into(),
            statistic,
            threshold,
            pass: statistic <= threshold,
        }
    }
}

/// Pull count α-UCB guarantees on an arm with gap `gap` after `lambda`
/// steps (with probability at least `1 - 2K/lambda`).
pub fn ucb_pull_threshold(alpha: f64, lambda: u64, gap: f64) -> f64 {
    let c = alpha.sqrt() - 1.5f64.sqrt();
    c * c * (lambda as f64 / 2.0).ln() / (4.0 * gap * gap)
}

/// Whether `lambda` is long enough for the pull-count guarantee to apply.
pub fn ucb_horizon_condition(alpha: f64, lambda: u64, arms: usize, delta_min: f64) -> bool {
    let l = lambda as f64;
    let lhs = l / l.ln().powi(2);
    let rhs = 4.0 * arms as f64 * (alpha - 1.5).powi(2) / delta_min.powi(4);
    lhs > rhs
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UcbBoundReport {
    pub lambda: u64,
    pub alpha: f64,
    pub thresholds: Vec<f64>,
    pub runs: usize,
    pub violation_count: usize,
    pub violation_rate: f64,
    /// `2K / lambda`.
    pub bound: f64,
    /// `bound` plus three binomial standard deviations.
    pub tolerance: f64,
    pub condition_ok: bool,
    pub min_pulls: Vec<u64>,
}

impl UcbBoundReport {
    pub fn verdict(&self) -> Verdict {
        Verdict::at_most(
            "ucb_lower_bound_violation_rate",
            self.violation_rate,
            self.tolerance,
        )
    }
}

/// Runs standalone α-UCB on one local game and counts runs in which some
/// arm falls short of its guaranteed pull count.
pub fn verify_ucb_lower_bound(
    row: &[f64],
    alpha: f64,
    lambda: u64,
    runs: usize,
    seed: u64,
) -> Result<UcbBoundReport> {
    if !(alpha >= 1.5) {
        return Err(Error::AlphaOutOfRange(alpha));
    }
    if lambda <= 2 {
        return Err(Error::config("lambda", "must exceed 2"));
    }
    if runs == 0 {
        return Err(Error::config("runs", "at least one run is required"));
    }
    let gaps = row_gaps(row)?;
    let dists: Vec<RewardDist> = row
        .iter()
        .map(|&p| RewardDist::bernoulli(p))
        .collect::<Result<_>>()?;
    let thresholds: Vec<f64> = gaps
        .gaps
        .iter()
        .map(|&g| ucb_pull_threshold(alpha, lambda, g))
        .collect();
    let condition_ok = ucb_horizon_condition(alpha, lambda, row.len(), gaps.delta_min);
    if !condition_ok {
        log::warn!("lambda = {lambda} does not satisfy the horizon condition; running anyway");
    }

    let pulls: Vec<Vec<u64>> = (0..runs)
        .into_par_iter()
        .map(|r| {
            let mut rng = agent_rng(episode_seed(seed, r as u64), 0, StreamTag::Reward);
            run_standalone_ucb(&dists, alpha, lambda, &mut rng)
                .pulls()
                .to_vec()
        })
        .collect();
    let violation_count = pulls
        .iter()
        .filter(|p| p.iter().zip(&thresholds).any(|(&n, &f)| (n as f64) < f))
        .count();
    let min_pulls = (0..row.len())
        .map(|k| pulls.iter().map(|p| p[k]).min().unwrap_or(0))
        .collect();
    let bound = 2.0 * row.len() as f64 / lambda as f64;
    let p = bound.min(1.0);
    let tolerance = bound + 3.0 * (p * (1.0 - p) / runs as f64).sqrt();
    Ok(UcbBoundReport {
        lambda,
        alpha,
        thresholds,
        runs,
        violation_count,
        violation_rate: violation_count as f64 / runs as f64,
        bound,
        tolerance,
        condition_ok,
        min_pulls,
    })
}

/// Fraction of (run, agent) pairs whose observing-phase free pulls meet the
/// guaranteed count at `kappa` on every arm.
pub fn observing_phase_threshold_rate(
    inst: &LocalInstanceSet,
    alpha: f64,
    kappa: u64,
    traces: &[EpisodeTrace],
) -> Result<f64> {
    let thresholds: Vec<Vec<f64>> = (0..inst.agents())
        .map(|m| {
            row_gaps(inst.row(m)).map(|g| {
                g.gaps
                    .iter()
                    .map(|&d| ucb_pull_threshold(alpha, kappa, d))
                    .collect()
            })
        })
        .collect::<Result<_>>()?;
    let total = traces.len() * inst.agents();
    if total == 0 {
        return Ok(1.0);
    }
    let ok = traces
        .iter()
        .flat_map(|t| t.free_pulls.iter().zip(&thresholds))
        .filter(|(pulls, f)| pulls.iter().zip(f.iter()).all(|(&n, &th)| n as f64 >= th))
        .count();
    Ok(ok as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageReport {
    pub runs: usize,
    pub coverage: f64,
    pub threshold: f64,
}

impl CoverageReport {
    pub fn verdict(&self) -> Verdict {
        Verdict::at_least("confidence_event_coverage", self.coverage, self.threshold)
    }
}

/// Fraction of episodes in which every global estimate stayed inside its
/// confidence interval throughout the incentivizing phase.
pub fn coverage_check(traces: &[EpisodeTrace], delta: f64) -> CoverageReport {
    let covered = traces.iter().filter(|t| !t.confidence_violated).count();
    CoverageReport {
        runs: traces.len(),
        coverage: if traces.is_empty() {
            1.0
        } else {
            covered as f64 / traces.len() as f64
        },
        threshold: 1.0 - delta,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OlsFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares of `ys` on `xs`.
pub fn ols(xs: &[f64], ys: &[f64]) -> Result<OlsFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::config("sweep", "need at least two paired points"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::config("sweep", "all x values are equal"));
    }
    if syy == 0.0 {
        return Err(Error::DegenerateSweep(my));
    }
    let slope = sxy / sxx;
    Ok(OlsFit {
        slope,
        intercept: my - slope * mx,
        r_squared: sxy * sxy / (sxx * syy),
    })
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties. `None` when
/// either side is constant.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(xs), average_ranks(ys));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let sxy: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub delta: f64,
    pub log_inv_delta: f64,
    pub aggregate: AggregateResult,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaSweepReport {
    pub points: Vec<SweepPoint>,
    /// `None` when every mean cost is identical.
    pub fit: Option<OlsFit>,
}

impl DeltaSweepReport {
    pub fn verdicts(&self, min_r_squared: f64) -> Vec<Verdict> {
        let (r2, slope) = self
            .fit
            .map_or((f64::NAN, f64::NAN), |f| (f.r_squared, f.slope));
        let mut v = vec![
            Verdict::at_least("delta_sweep_r_squared", r2, min_r_squared),
            Verdict {
                check: "delta_sweep_slope_positive".into(),
                statistic: slope,
                threshold: 0.0,
                pass: slope > 0.0,
            },
        ];
        // NaN never passes.
        v.iter_mut().for_each(|x| x.pass &= !x.statistic.is_nan());
        v
    }
}

/// Mean cumulative incentives for each failure probability, regressed on
/// `ln(1/delta)`. Every point reuses the same episode seeds.
pub fn delta_sweep(
    inst: &LocalInstanceSet,
    cfg: &SimConfig,
    deltas: &[f64],
) -> Result<DeltaSweepReport> {
    let mut distinct = deltas.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::config(
            "deltas",
            "need at least three distinct values",
        ));
    }
    let points: Vec<SweepPoint> = deltas
        .iter()
        .map(|&delta| {
            let c = SimConfig {
                delta,
                ..cfg.clone()
            };
            run_monte_carlo(inst, &c).map(|res| SweepPoint {
                delta,
                log_inv_delta: (1.0 / delta).ln(),
                aggregate: res.aggregate,
            })
        })
        .collect::<Result<_>>()?;
    let xs: Vec<f64> = points.iter().map(|p| p.log_inv_delta).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.aggregate.mean_c_total).collect();
    let fit = match ols(&xs, &ys) {
        Ok(f) => Some(f),
        Err(Error::DegenerateSweep(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(DeltaSweepReport { points, fit })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MSweepRow {
    pub agents: usize,
    pub delta_min: f64,
    pub aggregate: AggregateResult,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MSweepReport {
    pub rows: Vec<MSweepRow>,
    /// Smallest agent count whose mean incentive cost is zero.
    pub first_zero: Option<usize>,
    pub spearman: Option<f64>,
}

impl MSweepReport {
    /// Mean cost at the largest M relative to the smallest M.
    pub fn end_ratio(&self) -> f64 {
        match (self.rows.first(), self.rows.last()) {
            (Some(a), Some(b)) if a.aggregate.mean_c_total > 0.0 => {
                b.aggregate.mean_c_total / a.aggregate.mean_c_total
            }
            (Some(_), Some(b)) if b.aggregate.mean_c_total == 0.0 => 0.0,
            _ => f64::NAN,
        }
    }

    pub fn verdicts(&self, max_end_ratio: f64) -> Vec<Verdict> {
        let rho = self.spearman.unwrap_or(f64::NAN);
        let min_acc = self
            .rows
            .iter()
            .map(|r| r.aggregate.accuracy)
            .fold(f64::INFINITY, f64::min);
        let mut v = vec![
            Verdict::at_most("m_sweep_spearman", rho, 0.0),
            Verdict::at_most("m_sweep_end_ratio", self.end_ratio(), max_end_ratio),
            Verdict::at_least("m_sweep_min_accuracy", min_acc, 1.0),
        ];
        v.iter_mut().for_each(|x| x.pass &= !x.statistic.is_nan());
        v
    }
}

/// Seed of the generated instance used for agent count `agents`.
pub fn m_sweep_instance_seed(master_seed: u64, agents: usize) -> u64 {
    derive_seed(master_seed, &[agents as u64, StreamTag::Instance as u64])
}

/// One generated instance per agent count, shared by all runs at that
/// count.
pub fn m_sweep(
    template: &InstanceGenConfig,
    cfg: &SimConfig,
    m_values: &[usize],
) -> Result<MSweepReport> {
    let mut ms = m_values.to_vec();
    ms.sort_unstable();
    ms.dedup();
    let mut rows = Vec::with_capacity(ms.len());
    for agents in ms {
        let gen = InstanceGenConfig {
            agents,
            ..template.clone()
        };
        let mut rng = rng_from_seed(m_sweep_instance_seed(cfg.master_seed, agents));
        let inst = generate_random_instance(&gen, &mut rng)?;
        let res = run_monte_carlo(&inst, cfg)?;
        log::info!("M = {agents}: mean C(T) = {}", res.aggregate.mean_c_total);
        rows.push(MSweepRow {
            agents,
            delta_min: inst.global_view().delta_min,
            aggregate: res.aggregate,
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.agents as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.aggregate.mean_c_total).collect();
    Ok(MSweepReport {
        first_zero: rows
            .iter()
            .find(|r| r.aggregate.mean_c_total == 0.0)
            .map(|r| r.agents),
        spearman: spearman(&xs, &ys),
        rows,
    })
}

/// Matched-seed comparison for one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefusalPair {
    pub seed: u64,
    pub r_follow: f64,
    pub r_refuse: f64,
    /// Step of the declined offer; `None` if the agent's UCB arm coincided
    /// with the offer, so no refusal took place.
    pub refusal_step: Option<u64>,
    /// Bonuses the refusing agent collected after its refusal.
    pub bonus_after_refusal: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefusalReport {
    pub agent: usize,
    pub refuse_at: u64,
    pub runs: usize,
    pub runs_without_offer: usize,
    pub pairs: Vec<RefusalPair>,
    pub mean_follow: f64,
    pub mean_refuse: f64,
    pub stderr_follow: f64,
    pub stderr_refuse: f64,
    pub mean_difference: f64,
    pub stderr_difference: f64,
}

impl RefusalReport {
    /// Following should not earn less than refusing, up to two paired
    /// standard errors.
    pub fn verdict(&self) -> Verdict {
        Verdict::at_least(
            "follow_minus_refuse_reward",
            self.mean_difference,
            -2.0 * self.stderr_difference,
        )
    }
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn with_behavior(cfg: &SimConfig, agents: usize, agent: usize, b: IncentiveBehavior) -> SimConfig {
    let mut per: Vec<IncentiveBehavior> = (0..agents)
        .map(|m| cfg.behavior.for_agent(m).clone())
        .collect();
    per[agent] = b;
    SimConfig {
        behavior: BehaviorSpec::PerAgent(per),
        ..cfg.clone()
    }
}

/// Plays one matched pair: the designated agent always follows, then
/// (same seed) declines its first offer at or after `refuse_at`.
///
/// The inner `Err` holds a vacuous pair: the agent was never offered
/// anything from `refuse_at` on, so both runs are identical.
pub fn refusal_pair(
    inst: &LocalInstanceSet,
    cfg: &SimConfig,
    agent: usize,
    refuse_at: u64,
    seed: u64,
) -> Result<std::result::Result<RefusalPair, RefusalPair>> {
    let follow_cfg = with_behavior(cfg, inst.agents(), agent, IncentiveBehavior::AlwaysFollow);
    let follow = run_episode_with(inst, &follow_cfg, seed, Mode::Oti, &mut ())?;
    let offer_step = follow
        .principal
        .incentive_log()
        .iter()
        .find(|r| r.agent == agent && r.t >= refuse_at)
        .map(|r| r.t);
    let refuse_at_set = offer_step.into_iter().collect();
    let refuse_cfg = with_behavior(
        cfg,
        inst.agents(),
        agent,
        IncentiveBehavior::ScriptedRefuser {
            refuse_at: refuse_at_set,
        },
    );
    let refuse = run_episode_with(inst, &refuse_cfg, seed, Mode::Oti, &mut ())?;
    let refusal_step = refuse
        .principal
        .incentive_log()
        .iter()
        .find(|r| r.agent == agent && !r.followed)
        .map(|r| r.t);
    let bonus_after_refusal = refusal_step.map_or(0, |s| {
        refuse
            .principal
            .incentive_log()
            .iter()
            .filter(|r| r.agent == agent && r.t > s && r.followed)
            .count() as u64
    });
    let pair = RefusalPair {
        seed,
        r_follow: follow.trace.reward_per_agent[agent],
        r_refuse: refuse.trace.reward_per_agent[agent],
        refusal_step,
        bonus_after_refusal,
    };
    Ok(if offer_step.is_some() {
        Ok(pair)
    } else {
        Err(pair)
    })
}

/// Compares the designated agent's cumulative reward when always following
/// against refusing once, over `cfg.runs` matched seeds.
pub fn lemma1_empirical_check(
    inst: &LocalInstanceSet,
    cfg: &SimConfig,
    agent: usize,
    refuse_at: u64,
) -> Result<RefusalReport> {
    cfg.validate(inst.agents(), inst.arms())?;
    if agent >= inst.agents() {
        return Err(Error::config(
            "agent",
            format!("index {agent} out of range"),
        ));
    }
    if refuse_at <= cfg.kappa_steps() || refuse_at > cfg.horizon {
        return Err(Error::config(
            "refuse_at",
            "must fall inside the incentivizing phase",
        ));
    }
    let outcomes: Vec<std::result::Result<RefusalPair, RefusalPair>> = (0..cfg.runs)
        .into_par_iter()
        .map(|r| {
            refusal_pair(
                inst,
                cfg,
                agent,
                refuse_at,
                episode_seed(cfg.master_seed, r as u64),
            )
        })
        .collect::<Result<_>>()?;
    let runs_without_offer = outcomes.iter().filter(|o| o.is_err()).count();
    for (r, o) in outcomes.iter().enumerate() {
        if o.is_err() {
            log::debug!("{}", Error::NoOfferOccurred { agent, run: r });
        }
    }
    let offered: Vec<bool> = outcomes.iter().map(|o| o.is_ok()).collect();
    let pairs: Vec<RefusalPair> = outcomes
        .into_iter()
        .map(|o| o.unwrap_or_else(|p| p))
        .collect();
    let all_vacuous = runs_without_offer == pairs.len();
    let basis: Vec<&RefusalPair> = pairs
        .iter()
        .zip(&offered)
        .filter(|(_, &o)| o || all_vacuous)
        .map(|(p, _)| p)
        .collect();
    let follow: Vec<f64> = basis.iter().map(|p| p.r_follow).collect();
    let refuse: Vec<f64> = basis.iter().map(|p| p.r_refuse).collect();
    let diff: Vec<f64> = basis.iter().map(|p| p.r_follow - p.r_refuse).collect();
    let (mean_follow, stderr_follow) = mean_stderr(&follow);
    let (mean_refuse, stderr_refuse) = mean_stderr(&refuse);
    let (mean_difference, stderr_difference) = mean_stderr(&diff);
    Ok(RefusalReport {
        agent,
        refuse_at,
        runs: cfg.runs,
        runs_without_offer,
        pairs,
        mean_follow,
        mean_refuse,
        stderr_follow,
        stderr_refuse,
        mean_difference,
        stderr_difference,
    })
}

/// Reference free-pull counts `min(kappa, ln(kappa) / KL(mu_{k,m}, mu_{*,m}))`
/// per agent and arm; the local optimum gets `kappa`.
pub fn theoretical_free_pulls(inst: &LocalInstanceSet, kappa: u64) -> Result<Vec<Vec<f64>>> {
    let cap = kappa as f64;
    let log_kappa = if kappa > 1 { cap.ln() } else { 0.0 };
    (0..inst.agents())
        .map(|m| {
            let row = inst.row(m);
            let best = row_gaps(row)?.best_arm;
            row.iter()
                .enumerate()
                .map(|(k, &mu)| {
                    if k == best {
                        return Ok(cap);
                    }
                    let kl = kl_bernoulli(mu, row[best])?;
                    Ok(cap.min(log_kappa / kl))
                })
                .collect()
        })
        .collect()
}
