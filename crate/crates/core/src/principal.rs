//! The Observe-then-Incentivize principal.
//!
//! The principal watches every agent for the first `kappa` steps without
//! paying anything. Afterwards, at every step it
//!
//! 1. aggregates the local sample means into global estimates,
//! 2. drops arms whose upper bound falls below the best lower bound,
//! 3. offers a unit bonus on the active arm with the widest bound to the
//!    non-banned agent that has pulled it least.
//!
//! An agent that ignores an offer is banned from all future offers unless
//! `never_ban` is set. Only per-pair counts and running means are kept, so
//! the statistics occupy `O(K M)` memory for any horizon.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::agent::{running_mean, IncentiveOffer};
use crate::bandit::argmax_lowest;
use crate::error::{Error, Result};

/// Length of the observing phase as a function of the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "KappaRepr", into = "KappaRepr")]
pub enum KappaRule {
    /// `T / 2`
    #[default]
    Half,
    /// `T / 4`
    Quarter,
    /// `ceil(sqrt(T))`
    Sqrt,
    Fixed(u64),
}

impl KappaRule {
    pub fn kappa(&self, horizon: u64) -> u64 {
        match *self {
            KappaRule::Half => horizon / 2,
            KappaRule::Quarter => horizon / 4,
            KappaRule::Sqrt => {
                let mut r = (horizon as f64).sqrt() as u64;
                while r * r < horizon {
                    r += 1;
                }
                while r > 0 && (r - 1) * (r - 1) >= horizon {
                    r -= 1;
                }
                r
            }
            KappaRule::Fixed(k) => k,
        }
    }
}

impl FromStr for KappaRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "half" | "t/2" => Ok(KappaRule::Half),
            "quarter" | "t/4" => Ok(KappaRule::Quarter),
            "sqrt" | "sqrt(t)" => Ok(KappaRule::Sqrt),
            other => other
                .parse::<u64>()
                .map(KappaRule::Fixed)
                .map_err(|_| Error::config("kappa", format!("unknown rule `{s}`"))),
        }
    }
}

impl std::fmt::Display for KappaRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KappaRule::Half => f.write_str("half"),
            KappaRule::Quarter => f.write_str("quarter"),
            KappaRule::Sqrt => f.write_str("sqrt"),
            KappaRule::Fixed(k) => write!(f, "{k}"),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum KappaRepr {
    Steps(u64),
    Rule(String),
}

impl TryFrom<KappaRepr> for KappaRule {
    type Error = Error;

    fn try_from(r: KappaRepr) -> Result<Self> {
        match r {
            KappaRepr::Steps(k) => Ok(KappaRule::Fixed(k)),
            KappaRepr::Rule(s) => s.parse(),
        }
    }
}

impl From<KappaRule> for KappaRepr {
    fn from(k: KappaRule) -> Self {
        match k {
            KappaRule::Fixed(n) => KappaRepr::Steps(n),
            other => KappaRepr::Rule(other.to_string()),
        }
    }
}

/// Which confidence radius the principal uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CbVariant {
    /// Includes the `4 M ln ln(KT/delta)` correction.
    Full,
    /// Drops the `ln ln` correction.
    #[default]
    Simplified,
}

impl FromStr for CbVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "full" => Ok(CbVariant::Full),
            "simplified" => Ok(CbVariant::Simplified),
            _ => Err(Error::config(
                "cb_variant",
                format!("unknown variant `{s}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Observing,
    Incentivizing,
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrincipalConfig {
    pub horizon: u64,
    pub delta: f64,
    pub kappa: u64,
    pub cb_variant: CbVariant,
    pub never_ban: bool,
    /// When false the principal never offers anything (passive baseline).
    pub incentives: bool,
}

/// One issued offer and the agent's response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct IncentiveRecord {
    pub t: u64,
    pub agent: usize,
    pub arm: usize,
    pub followed: bool,
}

/// Confidence-bound scale `ln(KT/delta)`, plus `4 M ln ln(KT/delta)` for the
/// full variant.
pub fn confidence_log_term(
    arms: usize,
    agents: usize,
    horizon: u64,
    delta: f64,
    variant: CbVariant,
) -> Result<f64> {
    let base = (arms as f64 * horizon as f64 / delta).ln();
    match variant {
        CbVariant::Simplified => Ok(base),
        CbVariant::Full => {
            let loglog = base.ln();
            if !(loglog > 0.0) {
                return Err(Error::config(
                    "cb_variant",
                    format!(
                        "ln ln(KT/delta) = {loglog} <= 0; KT/delta is too small for the full bound"
                    ),
                ));
            }
            Ok(base + 4.0 * agents as f64 * loglog)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Principal {
    agents: usize,
    arms: usize,
    cfg: PrincipalConfig,
    log_term: f64,
    // Row-major [agent][arm].
    pulls: Vec<u64>,
    means: Vec<f64>,
    inv_pulls: Vec<f64>,
    paid: Vec<u64>,
    active: Vec<bool>,
    active_count: usize,
    phase: Phase,
    banned: Vec<bool>,
    outstanding: Vec<Option<usize>>,
    log: Vec<IncentiveRecord>,
    k_hat: Option<usize>,
    t: u64,
    // Global estimates and radii evaluated on the record at t - 1.
    estimates: Vec<f64>,
    radii: Vec<f64>,
}

impl Principal {
    pub fn new(agents: usize, arms: usize, cfg: PrincipalConfig) -> Result<Self> {
        if agents == 0 || arms == 0 {
            return Err(Error::config(
                "instance",
                "need at least one agent and one arm",
            ));
        }
        if !(cfg.delta > 0.0 && cfg.delta < 1.0) {
            return Err(Error::config(
                "delta",
                format!("{} is not in (0, 1)", cfg.delta),
            ));
        }
        if cfg.horizon == 0 {
            return Err(Error::config("horizon", "must be positive"));
        }
        if cfg.kappa > cfg.horizon {
            return Err(Error::config(
                "kappa",
                format!(
                    "observing phase {} exceeds horizon {}",
                    cfg.kappa, cfg.horizon
                ),
            ));
        }
        let log_term = confidence_log_term(arms, agents, cfg.horizon, cfg.delta, cfg.cb_variant)?;
        let cells = agents * arms;
        Ok(Self {
            agents,
            arms,
            cfg,
            log_term,
            pulls: vec![0; cells],
            means: vec![0.0; cells],
            inv_pulls: vec![f64::INFINITY; cells],
            paid: vec![0; cells],
            active: vec![true; arms],
            active_count: arms,
            phase: Phase::Observing,
            banned: vec![false; agents],
            outstanding: vec![None; agents],
            log: Vec::new(),
            k_hat: None,
            t: 0,
            estimates: vec![0.0; arms],
            radii: vec![f64::INFINITY; arms],
        })
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn arms(&self) -> usize {
        self.arms
    }

    pub fn config(&self) -> &PrincipalConfig {
        &self.cfg
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn steps_elapsed(&self) -> u64 {
        self.t
    }

    #[inline]
    pub fn pulls(&self, agent: usize, arm: usize) -> u64 {
        self.pulls[agent * self.arms + arm]
    }

    #[inline]
    pub fn local_mean(&self, agent: usize, arm: usize) -> f64 {
        self.means[agent * self.arms + arm]
    }

    pub fn pull_row(&self, agent: usize) -> &[u64] {
        &self.pulls[agent * self.arms..(agent + 1) * self.arms]
    }

    pub fn mean_row(&self, agent: usize) -> &[f64] {
        &self.means[agent * self.arms..(agent + 1) * self.arms]
    }

    /// Incentives paid to `agent` for pulling `arm`.
    pub fn paid(&self, agent: usize, arm: usize) -> u64 {
        self.paid[agent * self.arms + arm]
    }

    pub fn total_paid(&self) -> u64 {
        self.paid.iter().sum()
    }

    pub fn is_active(&self, arm: usize) -> bool {
        self.active[arm]
    }

    pub fn active_arms(&self) -> Vec<usize> {
        (0..self.arms).filter(|&k| self.active[k]).collect()
    }

    pub fn active_count(&self) -> usize {
        self.active_count
    }

    pub fn banned(&self) -> &[bool] {
        &self.banned
    }

    pub fn incentive_log(&self) -> &[IncentiveRecord] {
        &self.log
    }

    pub fn k_hat(&self) -> Option<usize> {
        self.k_hat
    }

    /// Global estimates from the most recent incentivizing-phase snapshot.
    pub fn estimates(&self) -> &[f64] {
        &self.estimates
    }

    /// Confidence radii from the most recent incentivizing-phase snapshot.
    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    /// Records agent `agent` pulling `arm` and receiving `x`.
    pub fn observe(&mut self, agent: usize, arm: usize, x: f64) -> Result<()> {
        if self.phase == Phase::Done {
            return Err(Error::ProtocolViolation(
                "observation after finalize".into(),
            ));
        }
        let i = agent * self.arms + arm;
        let n = self.pulls[i] + 1;
        self.pulls[i] = n;
        self.means[i] = running_mean(self.means[i], n, x);
        self.inv_pulls[i] = 1.0 / n as f64;
        Ok(())
    }

    /// Unweighted average of the agents' sample means for `arm`.
    pub fn aggregate_mean(&self, arm: usize) -> f64 {
        let sum: f64 = (0..self.agents).map(|m| self.local_mean(m, arm)).sum();
        sum / self.agents as f64
    }

    /// Confidence radius of the global estimate for `arm`; `+inf` while any
    /// agent has not yet pulled it.
    pub fn confidence_bound(&self, arm: usize) -> f64 {
        let inv_sum: f64 = (0..self.agents)
            .map(|m| self.inv_pulls[m * self.arms + arm])
            .sum();
        (inv_sum * self.log_term).sqrt() / self.agents as f64
    }

    fn refresh_snapshot(&mut self) {
        let arms = self.arms;
        let mut sums = vec![0.0; arms];
        let mut inv = vec![0.0; arms];
        for (mean_row, inv_row) in self
            .means
            .chunks_exact(arms)
            .zip(self.inv_pulls.chunks_exact(arms))
        {
            for k in 0..arms {
                sums[k] += mean_row[k];
                inv[k] += inv_row[k];
            }
        }
        let m = self.agents as f64;
        for k in 0..arms {
            self.estimates[k] = sums[k] / m;
            self.radii[k] = (inv[k] * self.log_term).sqrt() / m;
        }
    }

    /// Drops every active arm whose upper bound lies below the best lower
    /// bound among active arms. Uses the current snapshot.
    pub fn eliminate(&mut self) -> Result<()> {
        let threshold = (0..self.arms)
            .filter(|&k| self.active[k])
            .map(|k| self.estimates[k] - self.radii[k])
            .fold(f64::NEG_INFINITY, f64::max);
        let keep: Vec<bool> = (0..self.arms)
            .map(|k| self.active[k] && self.estimates[k] + self.radii[k] >= threshold)
            .collect();
        let count = keep.iter().filter(|&&b| b).count();
        if count == 0 {
            return Err(Error::EmptyActiveSet);
        }
        self.active = keep;
        self.active_count = count;
        Ok(())
    }

    /// The (arm, agent) pair to incentivize next, if any.
    pub fn select_incentive_target(&self) -> Option<(usize, usize)> {
        if self.active_count <= 1 {
            return None;
        }
        let mut arm: Option<usize> = None;
        for k in (0..self.arms).filter(|&k| self.active[k]) {
            if arm.map_or(true, |a| self.radii[k] > self.radii[a]) {
                arm = Some(k);
            }
        }
        let arm = arm?;
        let agent = (0..self.agents)
            .filter(|&m| !self.banned[m])
            .min_by_key(|&m| (self.pulls(m, arm), m))?;
        Some((arm, agent))
    }

    /// Starts step `t` and writes this step's offers into `offers`.
    pub fn step_into(&mut self, t: u64, offers: &mut [IncentiveOffer]) -> Result<()> {
        if t != self.t + 1 || t > self.cfg.horizon {
            return Err(Error::ProtocolViolation(format!(
                "step {t} requested after step {} (horizon {})",
                self.t, self.cfg.horizon
            )));
        }
        if let Some(m) = self.outstanding.iter().position(Option::is_some) {
            return Err(Error::ProtocolViolation(format!(
                "offer to agent {m} at step {} was never answered",
                self.t
            )));
        }
        if offers.len() != self.agents {
            return Err(Error::ProtocolViolation(
                "offer buffer has the wrong length".into(),
            ));
        }
        self.t = t;
        offers.fill(IncentiveOffer::NONE);
        if t <= self.cfg.kappa {
            return Ok(());
        }
        self.refresh_snapshot();
        if !self.cfg.incentives {
            return Ok(());
        }
        if self.phase == Phase::Observing {
            self.phase = Phase::Incentivizing;
        }
        if self.active_count > 1 {
            self.eliminate()?;
        }
        if self.active_count == 1 && self.k_hat.is_none() {
            self.k_hat = self.active.iter().position(|&a| a);
        }
        if let Some((arm, agent)) = self.select_incentive_target() {
            offers[agent] = IncentiveOffer::on(arm);
            self.outstanding[agent] = Some(arm);
        }
        Ok(())
    }

    /// Convenience wrapper around [`Principal::step_into`].
    pub fn step(&mut self, t: u64) -> Result<Vec<IncentiveOffer>> {
        let mut offers = vec![IncentiveOffer::NONE; self.agents];
        self.step_into(t, &mut offers)?;
        Ok(offers)
    }

    /// Registers whether `agent` pulled the arm it was offered this step.
    pub fn record_response(&mut self, agent: usize, followed: bool) -> Result<()> {
        let arm = self
            .outstanding
            .get_mut(agent)
            .and_then(Option::take)
            .ok_or_else(|| {
                Error::ProtocolViolation(format!("agent {agent} has no outstanding offer"))
            })?;
        self.log.push(IncentiveRecord {
            t: self.t,
            agent,
            arm,
            followed,
        });
        if followed {
            self.paid[agent * self.arms + arm] += 1;
        } else if !self.cfg.never_ban {
            self.banned[agent] = true;
        }
        Ok(())
    }

    /// Outputs the identified arm and closes the episode.
    ///
    /// With several arms still active the one with the largest aggregated
    /// sample mean wins.
    pub fn finalize(&mut self) -> usize {
        let k_hat = if self.active_count == 1 {
            self.active.iter().position(|&a| a).expect("one active arm")
        } else {
            let scores: Vec<f64> = (0..self.arms)
                .map(|k| {
                    if self.active[k] {
                        self.aggregate_mean(k)
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .collect();
            argmax_lowest(&scores)
        };
        self.k_hat = Some(k_hat);
        self.phase = Phase::Done;
        k_hat
    }

    #[cfg(test)]
    pub(crate) fn set_snapshot(&mut self, estimates: &[f64], radii: &[f64]) {
        self.estimates.copy_from_slice(estimates);
        self.radii.copy_from_slice(radii);
    }

    #[cfg(test)]
    pub(crate) fn set_active(&mut self, active: &[usize]) {
        self.active = (0..self.arms).map(|k| active.contains(&k)).collect();
        self.active_count = active.len();
    }
}
