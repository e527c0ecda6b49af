//! Declarative simulation configuration (JSON).
//!
//! Sections map onto the classic configuration concerns: controller choice
//! (`initial_placement`, `reallocation`, `placement`, `estimator`), server
//! population (`servers`), workload location (`workloads`) and the schedule
//! file (`schedule`).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controllers::SolveBudget;
use crate::model::{DemandEstimator, ServerSpec};
use crate::workload::WorkloadLocation;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("config error at {path}: {message}")]
    Invalid { path: String, message: String },
}

impl ConfigError {
    fn invalid(path: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Invalid {
            path: path.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerPool {
    #[serde(default)]
    pub count: u32,
    #[serde(default)]
    pub cpu_units: u32,
    #[serde(default)]
    pub memory_mb: u32,
    #[serde(default)]
    pub base_cpu_units: u32,
    /// Explicit servers, appended after the homogeneous ones.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub list: Vec<ServerSpec>,
}

impl ServerPool {
    pub fn homogeneous(count: u32, cpu_units: u32, memory_mb: u32, base_cpu_units: u32) -> Self {
        Self {
            count,
            cpu_units,
            memory_mb,
            base_cpu_units,
            list: Vec::new(),
        }
    }

    /// Homogeneous servers are named `s1..sN`.
    pub fn servers(&self) -> Vec<ServerSpec> {
        (1..=self.count)
            .map(|i| ServerSpec::new(format!("s{i}"), self.cpu_units, self.memory_mb, self.base_cpu_units))
            .chain(self.list.iter().cloned())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MigrationModel {
    #[serde(default = "defaults::rate_mb_per_s")]
    pub rate_mb_per_s: f64,
    #[serde(default = "defaults::cpu_overhead_frac")]
    pub cpu_overhead_frac: f64,
}

impl Default for MigrationModel {
    fn default() -> Self {
        Self {
            rate_mb_per_s: defaults::rate_mb_per_s(),
            cpu_overhead_frac: defaults::cpu_overhead_frac(),
        }
    }
}

mod defaults {
    pub fn loop_interval_s() -> u64 {
        3
    }
    pub fn reallocation_interval_s() -> u64 {
        1800
    }
    pub fn rate_mb_per_s() -> f64 {
        100.0
    }
    pub fn cpu_overhead_frac() -> f64 {
        0.1
    }
    pub fn sla_threshold_pct() -> f64 {
        100.0
    }
    pub fn none() -> String {
        "none".into()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub initial_placement: String,
    #[serde(default = "defaults::none")]
    pub reallocation: String,
    #[serde(default = "defaults::none")]
    pub placement: String,
    pub estimator: DemandEstimator,
    #[serde(default = "defaults::loop_interval_s")]
    pub loop_interval_s: u64,
    #[serde(default = "defaults::reallocation_interval_s")]
    pub reallocation_interval_s: u64,
    pub servers: ServerPool,
    #[serde(default)]
    pub migration: MigrationModel,
    #[serde(default = "defaults::sla_threshold_pct")]
    pub sla_threshold_pct: f64,
    pub duration_s: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workloads: Option<WorkloadLocation>,
    #[serde(default)]
    pub exact_budget: SolveBudget,
}

impl SimulationConfig {
    /// A config with defaults for everything but the essentials.
    pub fn new(initial_placement: &str, estimator: DemandEstimator, servers: ServerPool, duration_s: u64) -> Self {
        Self {
            initial_placement: initial_placement.to_string(),
            reallocation: defaults::none(),
            placement: defaults::none(),
            estimator,
            loop_interval_s: defaults::loop_interval_s(),
            reallocation_interval_s: defaults::reallocation_interval_s(),
            servers,
            migration: MigrationModel::default(),
            sla_threshold_pct: defaults::sla_threshold_pct(),
            duration_s,
            seed: 0,
            schedule: None,
            workloads: None,
            exact_budget: SolveBudget::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    /// Loads a config file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(s) = &config.schedule {
            config.schedule = Some(base.join(s));
        }
        if let Some(WorkloadLocation::Dir(d)) = &config.workloads {
            config.workloads = Some(WorkloadLocation::Dir(base.join(d)));
        }
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.loop_interval_s == 0 {
            return Err(ConfigError::invalid("loop_interval_s", "must be positive"));
        }
        if self.reallocation_interval_s == 0 {
            return Err(ConfigError::invalid("reallocation_interval_s", "must be positive"));
        }
        if self.duration_s % self.loop_interval_s != 0 {
            return Err(ConfigError::invalid(
                "duration_s",
                format!("{} is not a multiple of loop_interval_s ({})", self.duration_s, self.loop_interval_s),
            ));
        }
        if self.duration_s.checked_mul(1000).is_none() {
            return Err(ConfigError::invalid("duration_s", "too large"));
        }
        let pool = &self.servers;
        if pool.count == 0 && pool.list.is_empty() {
            return Err(ConfigError::invalid("servers.count", "at least one server is required"));
        }
        if pool.count > 0 {
            if pool.cpu_units == 0 {
                return Err(ConfigError::invalid("servers.cpu_units", "must be positive"));
            }
            if pool.memory_mb == 0 {
                return Err(ConfigError::invalid("servers.memory_mb", "must be positive"));
            }
            if pool.base_cpu_units >= pool.cpu_units {
                return Err(ConfigError::invalid("servers.base_cpu_units", "must be below cpu_units"));
            }
        }
        let mut ids = std::collections::HashSet::new();
        for (i, s) in pool.servers().iter().enumerate() {
            if s.cpu_units == 0 || s.memory_mb == 0 || s.base_cpu_units >= s.cpu_units {
                return Err(ConfigError::invalid(
                    format!("servers.list[{}]", i.saturating_sub(pool.count as usize)),
                    "capacities must be positive and base_cpu_units below cpu_units",
                ));
            }
            if !ids.insert(s.id.clone()) {
                return Err(ConfigError::invalid("servers.list", format!("duplicate server id `{}`", s.id)));
            }
        }
        let m = &self.migration;
        if !(m.rate_mb_per_s.is_finite() && m.rate_mb_per_s > 0.0) {
            return Err(ConfigError::invalid("migration.rate_mb_per_s", "must be positive"));
        }
        if !(m.cpu_overhead_frac.is_finite() && m.cpu_overhead_frac >= 0.0) {
            return Err(ConfigError::invalid("migration.cpu_overhead_frac", "must be non-negative"));
        }
        if !(self.sla_threshold_pct.is_finite() && self.sla_threshold_pct > 0.0) {
            return Err(ConfigError::invalid("sla_threshold_pct", "must be positive"));
        }
        Ok(())
    }
}
