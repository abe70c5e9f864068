use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::cbo::CboConfig;

/// Whether schedule periods count epochs or individual updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleUnit {
    #[default]
    Epoch,
    Iteration,
}

/// Step schedules for the inverse temperature α (multiplied by
/// `alpha_factor` every `alpha_every` periods up to `alpha_cap`) and the noise
/// scale σ̃ (multiplied by `sigma_factor` every `sigma_every` periods).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub alpha_enabled: bool,
    pub alpha_factor: f64,
    pub alpha_every: u64,
    pub alpha_cap: f64,
    pub sigma_enabled: bool,
    pub sigma_factor: f64,
    pub sigma_every: u64,
    pub unit: ScheduleUnit,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            alpha_enabled: false,
            alpha_factor: 10.0,
            alpha_every: 100,
            alpha_cap: 1e7,
            sigma_enabled: false,
            sigma_factor: 0.9,
            sigma_every: 100,
            unit: ScheduleUnit::Epoch,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self, initial_alpha: f64) -> Result<()> {
        if !(self.alpha_factor > 0.0) || !(self.sigma_factor > 0.0) {
            return Err(Error::Config("schedule factors must be positive".into()));
        }
        if self.alpha_every == 0 || self.sigma_every == 0 {
            return Err(Error::Config("schedule periods must be positive".into()));
        }
        if self.alpha_enabled && self.alpha_cap < initial_alpha {
            return Err(Error::Config(format!(
                "alpha cap {} is below the initial alpha {initial_alpha}",
                self.alpha_cap
            )));
        }
        Ok(())
    }
}

/// The configuration in effect after `periods` completed epochs (or
/// iterations). Computed from the base configuration, so repeated calls for
/// the same boundary agree.
pub fn apply_schedules(base: &CboConfig, sched: &ScheduleConfig, periods: u64) -> CboConfig {
    let mut cfg = *base;
    if sched.alpha_enabled {
        for _ in 0..periods / sched.alpha_every {
            if cfg.alpha >= sched.alpha_cap {
                break;
            }
            cfg.alpha = (cfg.alpha * sched.alpha_factor).min(sched.alpha_cap);
        }
    }
    if sched.sigma_enabled {
        for _ in 0..periods / sched.sigma_every {
            cfg.sigma *= sched.sigma_factor;
        }
    }
    cfg
}
