use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::instance::{derive_global_view, LocalInstanceSet};
use crate::error::{Error, Result};

/// Parameters of the random heterogeneous-instance generator.
///
/// Each local mean is a Gaussian perturbation, truncated to `[0, 1]`, of a
/// base vector spaced linearly between `base_low` and `base_high`. An
/// instance is kept only when its global gap lands in `delta_min_window`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InstanceGenConfig {
    pub arms: usize,
    pub agents: usize,
    pub base_low: f64,
    pub base_high: f64,
    pub local_variance: f64,
    pub delta_min_window: (f64, f64),
    pub max_attempts: u64,
}

impl Default for InstanceGenConfig {
    fn default() -> Self {
        Self {
            arms: 30,
            agents: 10,
            base_low: 0.4,
            base_high: 0.545,
            local_variance: 0.01,
            delta_min_window: (4.5e-3, 5.5e-3),
            max_attempts: 1_000_000,
        }
    }
}

impl InstanceGenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.arms < 2 {
            return Err(Error::config("arms", "at least two arms are required"));
        }
        if self.agents < 1 {
            return Err(Error::config("agents", "at least one agent is required"));
        }
        if !(0.0 <= self.base_low && self.base_low < self.base_high && self.base_high <= 1.0) {
            return Err(Error::config(
                "base_low/base_high",
                format!("need 0 <= {} < {} <= 1", self.base_low, self.base_high),
            ));
        }
        if !(self.local_variance > 0.0 && self.local_variance.is_finite()) {
            return Err(Error::config(
                "local_variance",
                "must be positive and finite",
            ));
        }
        let (lo, hi) = self.delta_min_window;
        if !(0.0 < lo && lo <= hi && hi < 1.0) {
            return Err(Error::config(
                "delta_min_window",
                format!("[{lo}, {hi}] is not a nonempty subinterval of (0, 1)"),
            ));
        }
        if self.max_attempts == 0 {
            return Err(Error::config("max_attempts", "must be at least 1"));
        }
        Ok(())
    }

    /// The linearly spaced base mean vector.
    pub fn base_means(&self) -> Vec<f64> {
        let span = self.base_high - self.base_low;
        let last = (self.arms - 1) as f64;
        (0..self.arms)
            .map(|k| self.base_low + span * k as f64 / last)
            .collect()
    }
}

fn truncated_unit<R: Rng + ?Sized>(dist: &Normal<f64>, rng: &mut R) -> f64 {
    loop {
        let x = dist.sample(rng);
        if (0.0..=1.0).contains(&x) {
            return x;
        }
    }
}

/// Draws instances until one satisfies the gap window and both uniqueness
/// requirements.
pub fn generate_random_instance<R: Rng + ?Sized>(
    cfg: &InstanceGenConfig,
    rng: &mut R,
) -> Result<LocalInstanceSet> {
    cfg.validate()?;
    let std_dev = cfg.local_variance.sqrt();
    let columns: Vec<Normal<f64>> = cfg
        .base_means()
        .into_iter()
        .map(|nu| Normal::new(nu, std_dev).expect("validated parameters"))
        .collect();
    let (lo, hi) = cfg.delta_min_window;

    for attempt in 1..=cfg.max_attempts {
        let rows: Vec<Vec<f64>> = (0..cfg.agents)
            .map(|_| columns.iter().map(|d| truncated_unit(d, rng)).collect())
            .collect();
        let Ok(inst) = LocalInstanceSet::new(rows) else {
            continue;
        };
        let delta_min = inst.global_view().delta_min;
        if (lo..=hi).contains(&delta_min) {
            log::debug!("accepted instance after {attempt} attempts (delta_min = {delta_min})");
            debug_assert_eq!(derive_global_view(&inst).as_ref(), Ok(inst.global_view()));
            return Ok(inst);
        }
    }
    Err(Error::GenerationExhausted {
        attempts: cfg.max_attempts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::rng_from_seed;

    #[test]
    fn default_base_vector_has_uniform_gaps() {
        let nu = InstanceGenConfig::default().base_means();
        assert_eq!(nu.len(), 30);
        assert!((nu[0] - 0.4).abs() < 1e-12);
        assert!((nu[29] - 0.545).abs() < 1e-12);
        for w in nu.windows(2) {
            assert!((w[1] - w[0] - 0.005).abs() < 1e-12);
        }
    }

    #[test]
    fn accepted_instance_lies_in_window() {
        let cfg = InstanceGenConfig {
            agents: 50,
            ..Default::default()
        };
        let inst = generate_random_instance(&cfg, &mut rng_from_seed(2024)).unwrap();
        let view = derive_global_view(&inst).unwrap();
        assert_eq!((inst.agents(), inst.arms()), (50, 30));
        assert!(
            (4.5e-3..=5.5e-3).contains(&view.delta_min),
            "{}",
            view.delta_min
        );
        assert!(inst.rows().flatten().all(|&mu| (0.0..=1.0).contains(&mu)));
    }

    #[test]
    fn vanishing_variance_recovers_base_vector() {
        let cfg = InstanceGenConfig {
            agents: 4,
            local_variance: 1e-14,
            ..Default::default()
        };
        let inst = generate_random_instance(&cfg, &mut rng_from_seed(1)).unwrap();
        for (g, nu) in inst.global_view().global_means.iter().zip(cfg.base_means()) {
            assert!((g - nu).abs() < 1e-5);
        }
    }

    #[test]
    fn impossible_window_exhausts() {
        let cfg = InstanceGenConfig {
            agents: 2,
            local_variance: 1e-14,
            delta_min_window: (0.5, 0.6),
            max_attempts: 25,
            ..Default::default()
        };
        let err = generate_random_instance(&cfg, &mut rng_from_seed(1)).unwrap_err();
        assert_eq!(err, Error::GenerationExhausted { attempts: 25 });
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            InstanceGenConfig {
                base_low: 0.6,
                base_high: 0.5,
                ..Default::default()
            },
            InstanceGenConfig {
                local_variance: 0.0,
                ..Default::default()
            },
            InstanceGenConfig {
                delta_min_window: (0.0, 0.1),
                ..Default::default()
            },
            InstanceGenConfig {
                delta_min_window: (0.2, 0.1),
                ..Default::default()
            },
            InstanceGenConfig {
                arms: 1,
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(
                matches!(cfg.validate(), Err(Error::Config { .. })),
                "{cfg:?}"
            );
        }
    }
}
