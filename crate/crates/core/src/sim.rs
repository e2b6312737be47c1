//! Episode orchestration and seeded Monte Carlo batches.
//!
//! Within a step the order is fixed: the principal announces offers, then
//! agents act in index order, each drawing a reward, updating itself, and
//! being observed by the principal.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{AgentState, IncentiveBehavior, IncentiveOffer, BONUS};
use crate::bandit::LocalInstanceSet;
use crate::error::{Error, Result};
use crate::principal::{CbVariant, IncentiveRecord, KappaRule, Principal, PrincipalConfig};
use crate::seeding::{agent_rng, episode_seed, StreamTag};

/// Incentive behavior for every agent, or one per agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorSpec {
    Shared(IncentiveBehavior),
    PerAgent(Vec<IncentiveBehavior>),
}

impl BehaviorSpec {
    pub fn for_agent(&self, agent: usize) -> &IncentiveBehavior {
        match self {
            BehaviorSpec::Shared(b) => b,
            BehaviorSpec::PerAgent(v) => &v[agent],
        }
    }
}

impl Default for BehaviorSpec {
    fn default() -> Self {
        BehaviorSpec::Shared(IncentiveBehavior::AlwaysFollow)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub horizon: u64,
    pub delta: f64,
    pub alpha: f64,
    pub kappa: KappaRule,
    pub cb_variant: CbVariant,
    pub behavior: BehaviorSpec,
    pub never_ban: bool,
    pub runs: usize,
    pub master_seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            horizon: 100_000,
            delta: 0.01,
            alpha: 2.0,
            kappa: KappaRule::Half,
            cb_variant: CbVariant::Simplified,
            behavior: BehaviorSpec::default(),
            never_ban: false,
            runs: 100,
            master_seed: 0,
        }
    }
}

impl SimConfig {
    pub fn kappa_steps(&self) -> u64 {
        self.kappa.kappa(self.horizon)
    }

    /// Checks the configuration against an instance shape.
    pub fn validate(&self, agents: usize, arms: usize) -> Result<()> {
        if self.horizon < 2 * arms as u64 {
            return Err(Error::config(
                "horizon",
                format!("{} is shorter than 2K = {}", self.horizon, 2 * arms),
            ));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config(
                "delta",
                format!("{} is not in (0, 1)", self.delta),
            ));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::config(
                "alpha",
                format!("{} must be positive", self.alpha),
            ));
        }
        if self.alpha < 1.5 {
            log::warn!(
                "alpha = {} is below 3/2; UCB guarantees do not apply",
                self.alpha
            );
        }
        if self.runs == 0 {
            return Err(Error::config("runs", "at least one run is required"));
        }
        if self.kappa_steps() > self.horizon {
            return Err(Error::config(
                "kappa",
                "observing phase exceeds the horizon",
            ));
        }
        match &self.behavior {
            BehaviorSpec::PerAgent(v) if v.len() != agents => {
                return Err(Error::config(
                    "behavior",
                    format!("{} behaviors given for {agents} agents", v.len()),
                ))
            }
            BehaviorSpec::PerAgent(v) => v.iter().try_for_each(IncentiveBehavior::validate)?,
            BehaviorSpec::Shared(b) => b.validate()?,
        }
        Ok(())
    }

    fn principal_config(&self, incentives: bool) -> PrincipalConfig {
        PrincipalConfig {
            horizon: self.horizon,
            delta: self.delta,
            kappa: self.kappa_steps(),
            cb_variant: self.cb_variant,
            never_ban: self.never_ban,
            incentives,
        }
    }
}

/// OTI with incentives, or the purely passive principal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Oti,
    Passive,
}

/// Per-episode summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeTrace {
    pub seed: u64,
    pub k_hat: usize,
    pub correct: bool,
    pub c_total: u64,
    pub c_pair: Vec<Vec<u64>>,
    pub free_pulls: Vec<Vec<u64>>,
    pub s_final_size: usize,
    pub bans: Vec<bool>,
    /// The global estimate left its confidence interval at some
    /// incentivizing-phase step.
    pub confidence_violated: bool,
    /// The optimal global arm was eliminated at some step.
    pub optimal_eliminated: bool,
    pub reward_per_agent: Vec<f64>,
}

/// One agent's action at one step, for full traces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub t: u64,
    pub agent: usize,
    pub arm: usize,
    pub reward: f64,
    pub offer: Option<usize>,
    pub followed: bool,
}

/// Hooks into an episode as it runs.
pub trait EpisodeObserver {
    /// Called after the principal has announced the offers for step `t`.
    fn on_offers(&mut self, _t: u64, _offers: &[IncentiveOffer], _principal: &Principal) {}
    fn on_step(&mut self, _record: &StepRecord) {}
}

impl EpisodeObserver for () {}

impl<F: FnMut(&StepRecord)> EpisodeObserver for F {
    fn on_step(&mut self, record: &StepRecord) {
        self(record)
    }
}

/// Everything left at the end of an episode.
#[derive(Debug, Clone)]
pub struct EpisodeOutcome {
    pub trace: EpisodeTrace,
    pub principal: Principal,
    pub agents: Vec<AgentState>,
}

enum OfferSource<'a> {
    Principal,
    Log(&'a [IncentiveRecord]),
}

/// Runs one OTI episode.
pub fn run_episode(inst: &LocalInstanceSet, cfg: &SimConfig, seed: u64) -> Result<EpisodeTrace> {
    run_episode_with(inst, cfg, seed, Mode::Oti, &mut ()).map(|o| o.trace)
}

/// Runs one episode with a principal that never offers incentives.
pub fn run_passive_baseline(
    inst: &LocalInstanceSet,
    cfg: &SimConfig,
    seed: u64,
) -> Result<EpisodeTrace> {
    run_episode_with(inst, cfg, seed, Mode::Passive, &mut ()).map(|o| o.trace)
}

pub fn run_episode_with<O: EpisodeObserver + ?Sized>(
    inst: &LocalInstanceSet,
    cfg: &SimConfig,
    seed: u64,
    mode: Mode,
    observer: &mut O,
) -> Result<EpisodeOutcome> {
    simulate(inst, cfg, seed, mode, OfferSource::Principal, observer)
}

/// Re-runs an episode feeding agents the offers recorded in `log` instead
/// of letting the principal choose. With the original seed this
/// reproduces the original final state.
pub fn replay_incentive_log(
    inst: &LocalInstanceSet,
    cfg: &SimConfig,
    seed: u64,
    log: &[IncentiveRecord],
) -> Result<EpisodeOutcome> {
    simulate(
        inst,
        cfg,
        seed,
        Mode::Passive,
        OfferSource::Log(log),
        &mut (),
    )
}

fn simulate<O: EpisodeObserver + ?Sized>(
    inst: &LocalInstanceSet,
    cfg: &SimConfig,
    seed: u64,
    mode: Mode,
    source: OfferSource<'_>,
    observer: &mut O,
) -> Result<EpisodeOutcome> {
    let (n_agents, arms) = (inst.agents(), inst.arms());
    cfg.validate(n_agents, arms)?;
    let view = inst.global_view();
    let kappa = cfg.kappa_steps();
    let dists = inst.reward_dists();

    let mut principal = Principal::new(n_agents, arms, cfg.principal_config(mode == Mode::Oti))?;
    let mut agents: Vec<AgentState> = (0..n_agents)
        .map(|m| AgentState::new(arms, cfg.alpha, cfg.behavior.for_agent(m).clone()))
        .collect();
    let mut reward_rngs: Vec<_> = (0..n_agents)
        .map(|m| agent_rng(seed, m, StreamTag::Reward))
        .collect();
    let mut behavior_rngs: Vec<_> = (0..n_agents)
        .map(|m| agent_rng(seed, m, StreamTag::Behavior))
        .collect();

    let mut offers = vec![IncentiveOffer::NONE; n_agents];
    let mut free_pulls = vec![vec![0u64; arms]; n_agents];
    let mut rewards = vec![0.0f64; n_agents];
    let mut confidence_violated = false;
    let mut optimal_eliminated = false;
    let mut replay_cursor = 0usize;

    for t in 1..=cfg.horizon {
        principal.step_into(t, &mut offers)?;
        if let OfferSource::Log(log) = source {
            while let Some(rec) = log.get(replay_cursor).filter(|r| r.t == t) {
                offers[rec.agent] = IncentiveOffer::on(rec.arm);
                replay_cursor += 1;
            }
        }
        if t > kappa {
            let est = principal.estimates();
            let radii = principal.radii();
            confidence_violated |= view
                .global_means
                .iter()
                .enumerate()
                .any(|(k, mu)| (est[k] - mu).abs() > radii[k]);
            optimal_eliminated |= !principal.is_active(view.k_star);
        }
        observer.on_offers(t, &offers, &principal);

        for m in 0..n_agents {
            let offer = offers[m];
            let action = agents[m].act(offer, &mut behavior_rngs[m]);
            let x = dists[m * arms + action.arm].sample(&mut reward_rngs[m]);
            agents[m].update(action.arm, x)?;
            principal.observe(m, action.arm, x)?;
            rewards[m] += x;
            if offer.arm.is_some() {
                if matches!(source, OfferSource::Principal) {
                    principal.record_response(m, action.followed)?;
                }
                if action.followed {
                    rewards[m] += BONUS;
                }
            }
            if t <= kappa {
                free_pulls[m][action.arm] += 1;
            }
            observer.on_step(&StepRecord {
                t,
                agent: m,
                arm: action.arm,
                reward: x,
                offer: offer.arm,
                followed: action.followed,
            });
        }
    }

    let s_final_size = principal.active_count();
    let k_hat = match mode {
        Mode::Oti => principal.finalize(),
        Mode::Passive => principal.finalize(),
    };
    let c_pair: Vec<Vec<u64>> = (0..n_agents)
        .map(|m| (0..arms).map(|k| principal.paid(m, k)).collect())
        .collect();
    let trace = EpisodeTrace {
        seed,
        k_hat,
        correct: k_hat == view.k_star,
        c_total: c_pair.iter().flatten().sum(),
        c_pair,
        free_pulls,
        s_final_size,
        bans: principal.banned().to_vec(),
        confidence_violated,
        optimal_eliminated,
        reward_per_agent: rewards,
    };
    Ok(EpisodeOutcome {
        trace,
        principal,
        agents,
    })
}

/// Averages over a batch of episodes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateResult {
    pub runs: usize,
    pub accuracy: f64,
    pub mean_c_total: f64,
    pub std_c_total: f64,
    pub mean_c_pair: Vec<Vec<f64>>,
    pub mean_free_pulls: Vec<Vec<f64>>,
    pub violation_rate: f64,
    pub optimal_eliminated_rate: f64,
    pub mean_s_final_size: f64,
}

impl AggregateResult {
    /// Reduces traces in the order given.
    pub fn from_traces(traces: &[EpisodeTrace]) -> Self {
        assert!(!traces.is_empty(), "aggregate of zero episodes");
        let n = traces.len() as f64;
        let frac =
            |f: &dyn Fn(&EpisodeTrace) -> bool| traces.iter().filter(|t| f(t)).count() as f64 / n;
        let mean_c_total = traces.iter().map(|t| t.c_total as f64).sum::<f64>() / n;
        let std_c_total = if traces.len() > 1 {
            let ss: f64 = traces
                .iter()
                .map(|t| (t.c_total as f64 - mean_c_total).powi(2))
                .sum();
            (ss / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let mean_matrix = |get: &dyn Fn(&EpisodeTrace) -> &Vec<Vec<u64>>| {
            let first = get(&traces[0]);
            let mut acc: Vec<Vec<f64>> = first.iter().map(|r| vec![0.0; r.len()]).collect();
            for t in traces {
                for (a, row) in acc.iter_mut().zip(get(t)) {
                    for (x, &v) in a.iter_mut().zip(row) {
                        *x += v as f64;
                    }
                }
            }
            acc.iter_mut().flatten().for_each(|x| *x /= n);
            acc
        };
        Self {
            runs: traces.len(),
            accuracy: frac(&|t| t.correct),
            mean_c_total,
            std_c_total,
            mean_c_pair: mean_matrix(&|t| &t.c_pair),
            mean_free_pulls: mean_matrix(&|t| &t.free_pulls),
            violation_rate: frac(&|t| t.confidence_violated),
            optimal_eliminated_rate: frac(&|t| t.optimal_eliminated),
            mean_s_final_size: traces.iter().map(|t| t.s_final_size as f64).sum::<f64>() / n,
        }
    }

    /// Mean incentives per arm, summed over agents.
    pub fn mean_c_per_arm(&self) -> Vec<f64> {
        let arms = self.mean_c_pair.first().map_or(0, Vec::len);
        (0..arms)
            .map(|k| self.mean_c_pair.iter().map(|row| row[k]).sum())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Schedule {
    Serial,
    #[default]
    Parallel,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloResult {
    pub traces: Vec<EpisodeTrace>,
    pub aggregate: AggregateResult,
}

/// Runs `cfg.runs` OTI episodes.
pub fn run_monte_carlo(inst: &LocalInstanceSet, cfg: &SimConfig) -> Result<MonteCarloResult> {
    run_monte_carlo_with(inst, cfg, Mode::Oti, Schedule::Parallel)
}

/// Runs `cfg.runs` episodes. Episode `i` is seeded from
/// `(master_seed, i)` and results are reduced in episode order, so the
/// schedule never changes the output.
pub fn run_monte_carlo_with(
    inst: &LocalInstanceSet,
    cfg: &SimConfig,
    mode: Mode,
    schedule: Schedule,
) -> Result<MonteCarloResult> {
    cfg.validate(inst.agents(), inst.arms())?;
    let one = |i: usize| {
        let seed = episode_seed(cfg.master_seed, i as u64);
        run_episode_with(inst, cfg, seed, mode, &mut ()).map(|o| o.trace)
    };
    let traces: Vec<EpisodeTrace> = match schedule {
        Schedule::Serial => (0..cfg.runs).map(one).collect::<Result<_>>()?,
        Schedule::Parallel => (0..cfg.runs)
            .into_par_iter()
            .map(one)
            .collect::<Result<_>>()?,
    };
    let aggregate = AggregateResult::from_traces(&traces);
    Ok(MonteCarloResult { traces, aggregate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::run_standalone_ucb;

    fn short_cfg(horizon: u64) -> SimConfig {
        SimConfig {
            horizon,
            runs: 4,
            ..Default::default()
        }
    }

    #[test]
    fn config_validation() {
        let toy = LocalInstanceSet::toy();
        let ok = short_cfg(1000);
        assert!(ok.validate(2, 3).is_ok());
        assert!(SimConfig {
            horizon: 5,
            ..ok.clone()
        }
        .validate(2, 3)
        .is_err());
        assert!(SimConfig {
            delta: 1.0,
            ..ok.clone()
        }
        .validate(2, 3)
        .is_err());
        assert!(SimConfig {
            runs: 0,
            ..ok.clone()
        }
        .validate(2, 3)
        .is_err());
        assert!(SimConfig {
            kappa: KappaRule::Fixed(2000),
            ..ok.clone()
        }
        .validate(2, 3)
        .is_err());
        let per_agent = BehaviorSpec::PerAgent(vec![IncentiveBehavior::AlwaysFollow]);
        assert!(run_episode(
            &toy,
            &SimConfig {
                behavior: per_agent,
                ..ok.clone()
            },
            0
        )
        .is_err());
        // Accepted with a warning.
        assert!(SimConfig { alpha: 1.0, ..ok }.validate(2, 3).is_ok());
    }

    #[test]
    fn same_seed_same_trace() {
        let toy = LocalInstanceSet::toy();
        let cfg = short_cfg(4000);
        assert_eq!(
            run_episode(&toy, &cfg, 17).unwrap(),
            run_episode(&toy, &cfg, 17).unwrap()
        );
        assert_ne!(
            run_episode(&toy, &cfg, 17).unwrap(),
            run_episode(&toy, &cfg, 18).unwrap()
        );
    }

    #[test]
    fn trace_invariants() {
        let toy = LocalInstanceSet::toy();
        let cfg = short_cfg(4000);
        let out = run_episode_with(&toy, &cfg, 3, Mode::Oti, &mut ()).unwrap();
        let tr = &out.trace;
        assert_eq!(tr.c_total, tr.c_pair.iter().flatten().sum::<u64>());
        for row in &tr.free_pulls {
            assert_eq!(row.iter().sum::<u64>(), cfg.kappa_steps());
        }
        let observed: u64 = (0..2)
            .map(|m| out.principal.pull_row(m).iter().sum::<u64>())
            .sum();
        assert_eq!(observed, 2 * cfg.horizon);
        for (m, agent) in out.agents.iter().enumerate() {
            assert_eq!(agent.pulls(), out.principal.pull_row(m));
            assert_eq!(agent.means(), out.principal.mean_row(m));
        }
    }

    #[test]
    fn passive_baseline_pays_nothing() {
        let toy = LocalInstanceSet::toy();
        let res =
            run_monte_carlo_with(&toy, &short_cfg(2000), Mode::Passive, Schedule::Serial).unwrap();
        assert!(res.traces.iter().all(|t| t.c_total == 0));
        assert_eq!(res.aggregate.mean_c_total, 0.0);
    }

    #[test]
    fn observing_phase_is_behaviorally_inert() {
        let toy = LocalInstanceSet::toy();
        let cfg = short_cfg(6000);
        let seed = 99;
        let tr = run_episode(&toy, &cfg, seed).unwrap();
        let dists = toy.reward_dists();
        for m in 0..2 {
            let mut rng = agent_rng(seed, m, StreamTag::Reward);
            let solo = run_standalone_ucb(
                &dists[m * 3..(m + 1) * 3],
                cfg.alpha,
                cfg.kappa_steps(),
                &mut rng,
            );
            assert_eq!(solo.pulls(), tr.free_pulls[m].as_slice());
        }
    }

    #[test]
    fn single_run_aggregate_equals_trace() {
        let toy = LocalInstanceSet::toy();
        let cfg = SimConfig {
            runs: 1,
            ..short_cfg(2000)
        };
        let res = run_monte_carlo(&toy, &cfg).unwrap();
        let t = &res.traces[0];
        let a = &res.aggregate;
        assert_eq!(a.accuracy, if t.correct { 1.0 } else { 0.0 });
        assert_eq!(a.mean_c_total, t.c_total as f64);
        assert_eq!(a.std_c_total, 0.0);
        assert_eq!(a.mean_c_pair[1][2], t.c_pair[1][2] as f64);
    }

    #[test]
    fn serial_and_parallel_agree() {
        let toy = LocalInstanceSet::toy();
        let cfg = SimConfig {
            runs: 6,
            ..short_cfg(3000)
        };
        let a = run_monte_carlo_with(&toy, &cfg, Mode::Oti, Schedule::Serial).unwrap();
        let b = run_monte_carlo_with(&toy, &cfg, Mode::Oti, Schedule::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn replay_reproduces_final_state() {
        let toy = LocalInstanceSet::toy();
        let cfg = SimConfig {
            behavior: BehaviorSpec::Shared(IncentiveBehavior::StochasticFollow { p_follow: 0.8 }),
            never_ban: true,
            ..short_cfg(4000)
        };
        let orig = run_episode_with(&toy, &cfg, 5, Mode::Oti, &mut ()).unwrap();
        assert!(!orig.principal.incentive_log().is_empty());
        let replay = replay_incentive_log(&toy, &cfg, 5, orig.principal.incentive_log()).unwrap();
        for m in 0..2 {
            assert_eq!(replay.principal.pull_row(m), orig.principal.pull_row(m));
            assert_eq!(replay.principal.mean_row(m), orig.principal.mean_row(m));
        }
        assert_eq!(replay.trace.reward_per_agent, orig.trace.reward_per_agent);
    }

    #[test]
    fn full_trace_observer_sees_every_action() {
        let toy = LocalInstanceSet::toy();
        let cfg = short_cfg(500);
        let mut records = Vec::new();
        let mut sink = |r: &StepRecord| records.push(*r);
        run_episode_with(&toy, &cfg, 1, Mode::Oti, &mut sink).unwrap();
        assert_eq!(records.len(), 1000);
        assert!(records
            .iter()
            .filter(|r| r.t <= 250)
            .all(|r| r.offer.is_none()));
    }
}
