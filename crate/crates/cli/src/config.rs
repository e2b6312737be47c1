//! Experiment configuration files.
//!
//! A config file is TOML with up to four tables: `[sim]`, `[instance]`,
//! `[generator]` and `[experiment]`. Every key is optional and unknown keys
//! are rejected. `--set KEY=VALUE` edits the parsed table before it is
//! validated; a bare key refers to `[sim]`.

use std::path::{Path, PathBuf};

use oti_core::{
    BehaviorSpec, CbVariant, IncentiveBehavior, InstanceGenConfig, KappaRule, SimConfig,
};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub horizon: u64,
    pub delta: f64,
    pub alpha: f64,
    pub kappa: KappaRule,
    pub cb_variant: CbVariant,
    /// Shared by every agent unless `behaviors` is given.
    pub behavior: IncentiveBehavior,
    pub behaviors: Option<Vec<IncentiveBehavior>>,
    pub never_ban: bool,
    pub runs: usize,
    pub master_seed: u64,
}

impl Default for SimSection {
    fn default() -> Self {
        let d = SimConfig::default();
        Self {
            horizon: d.horizon,
            delta: d.delta,
            alpha: d.alpha,
            kappa: d.kappa,
            cb_variant: d.cb_variant,
            behavior: IncentiveBehavior::AlwaysFollow,
            behaviors: None,
            never_ban: d.never_ban,
            runs: d.runs,
            master_seed: d.master_seed,
        }
    }
}

impl SimSection {
    pub fn to_sim_config(&self) -> SimConfig {
        let behavior = match &self.behaviors {
            Some(v) => BehaviorSpec::PerAgent(v.clone()),
            None => BehaviorSpec::Shared(self.behavior.clone()),
        };
        SimConfig {
            horizon: self.horizon,
            delta: self.delta,
            alpha: self.alpha,
            kappa: self.kappa,
            cb_variant: self.cb_variant,
            behavior,
            never_ban: self.never_ban,
            runs: self.runs,
            master_seed: self.master_seed,
        }
    }
}

/// Where the instance comes from. Without a file, the built-in 2 x 3 toy
/// instance is used.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InstanceSection {
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub deltas: Vec<f64>,
    pub r2_threshold: f64,
    pub m_values: Vec<usize>,
    pub m_sweep_runs: usize,
    pub end_ratio: f64,
    pub ucb_row: Vec<f64>,
    pub ucb_lambda: u64,
    pub ucb_runs: usize,
    /// 1-based.
    pub lemma1_agent: usize,
    /// Defaults to the first incentivizing step.
    pub lemma1_refuse_at: Option<u64>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            deltas: vec![1e-1, 1e-2, 1e-3, 1e-4],
            r2_threshold: 0.9,
            m_values: (10..=150).step_by(20).collect(),
            m_sweep_runs: 20,
            end_ratio: 0.01,
            ucb_row: vec![0.9, 0.5, 0.1],
            ucb_lambda: 100_000,
            ucb_runs: 1000,
            lemma1_agent: 1,
            lemma1_refuse_at: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub sim: SimSection,
    pub instance: InstanceSection,
    pub generator: InstanceGenConfig,
    pub experiment: ExperimentSection,
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Applies one `KEY=VALUE` override. `VALUE` is read as a TOML value,
/// falling back to a plain string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{assignment}` is not KEY=VALUE")))?;
    let mut path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("bad override key `{key}`")));
    }
    if path.len() == 1 {
        path.insert(0, "sim");
    }
    let (last, parents) = path.split_last().unwrap();
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("`{p}` in `{key}` is not a table")))?;
    }
    cur.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

/// Reads, overrides and deserializes a configuration. A relative instance
/// file is resolved against the config file's directory.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<Config, CliError> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
            toml::from_str::<toml::Table>(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let mut cfg: Config = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
    if let (Some(base), Some(file)) = (path.and_then(Path::parent), cfg.instance.file.as_mut()) {
        if file.is_relative() {
            *file = base.join(&*file);
        }
    }
    Ok(cfg)
}
