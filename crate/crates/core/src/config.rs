//! Versioned JSON run configuration shared by `simulate` and `sweep`.
//!
//! Every field is optional in the file; missing fields take the simulator
//! defaults. Command-line flags override file values.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Algorithm, CoordinationCalibration, CostModel};
use crate::fusion::{FusionPolicy, GroupSpec, DEFAULT_FUSION_BUFFER_BYTES};
use crate::sim::sweep::DEFAULT_GROUP_COUNT;
use crate::sim::{CoordinatorKind, SimConfig};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config field `{field}`: {message}")]
    Field {
        field: &'static str,
        message: String,
    },
    #[error("unsupported config schema_version {0} (expected {CONFIG_SCHEMA_VERSION})")]
    Schema(u32),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

fn field(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        field,
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub world_size: usize,
    pub steps: usize,
    pub warmup_steps: usize,
    pub cycle_time_ms: f64,
    pub coordinator: CoordinatorKind,
    /// Gate fusion on complete groups (`simulate` only; `sweep` runs both).
    pub grouped: bool,
    /// Equal-byte group count used when no group file is given.
    pub group_count: usize,
    pub fusion_buffer_bytes: u64,
    pub alpha: f64,
    pub beta: f64,
    pub algorithm: Algorithm,
    pub tree_bandwidth_factor: f64,
    pub seconds_per_record: f64,
    pub record_header_bytes: u64,
    pub stall_sigma_us: f64,
    pub seed: u64,
    pub t_misc_ms: f64,
    pub cycle_limit: u64,
    pub cache_capacity: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sim = SimConfig::default();
        RunConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            world_size: sim.world_size,
            steps: sim.steps,
            warmup_steps: sim.warmup_steps,
            cycle_time_ms: sim.cycle_time_ns as f64 * 1e-6,
            coordinator: sim.coordinator,
            grouped: false,
            group_count: DEFAULT_GROUP_COUNT,
            fusion_buffer_bytes: DEFAULT_FUSION_BUFFER_BYTES,
            alpha: sim.cost.alpha,
            beta: sim.cost.beta,
            algorithm: sim.cost.algorithm,
            tree_bandwidth_factor: sim.cost.tree_bandwidth_factor,
            seconds_per_record: sim.calibration.seconds_per_record,
            record_header_bytes: sim.calibration.record_header_bytes,
            stall_sigma_us: sim.stall_sigma_ns * 1e-3,
            seed: sim.seed,
            t_misc_ms: sim.t_misc_ns as f64 * 1e-6,
            cycle_limit: sim.cycle_limit,
            cache_capacity: sim.cache_capacity,
        }
    }
}

fn ms_to_ns(ms: f64) -> u64 {
    (ms * 1e6).round() as u64
}

fn nonnegative(name: &'static str, v: f64) -> Result<(), ConfigError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(field(
            name,
            format!("must be a nonnegative number, got {v}"),
        ))
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let config: RunConfig =
            serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
                path: path.display().to_string(),
                source,
            })?;
        if config.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(ConfigError::Schema(config.schema_version));
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(ConfigError::Schema(self.schema_version));
        }
        if self.world_size == 0 {
            return Err(field("world_size", "must be at least 1"));
        }
        if self.steps == 0 {
            return Err(field("steps", "must be at least 1"));
        }
        if !(self.cycle_time_ms > 0.0 && self.cycle_time_ms.is_finite())
            || ms_to_ns(self.cycle_time_ms) == 0
        {
            return Err(field(
                "cycle_time_ms",
                format!("must be positive, got {}", self.cycle_time_ms),
            ));
        }
        if self.group_count == 0 {
            return Err(field("group_count", "must be at least 1"));
        }
        if self.fusion_buffer_bytes == 0 {
            return Err(field("fusion_buffer_bytes", "must be positive"));
        }
        nonnegative("alpha", self.alpha)?;
        nonnegative("beta", self.beta)?;
        if !(self.tree_bandwidth_factor > 0.0 && self.tree_bandwidth_factor.is_finite()) {
            return Err(field("tree_bandwidth_factor", "must be positive"));
        }
        nonnegative("seconds_per_record", self.seconds_per_record)?;
        nonnegative("stall_sigma_us", self.stall_sigma_us)?;
        nonnegative("t_misc_ms", self.t_misc_ms)?;
        if self.cycle_limit == 0 {
            return Err(field("cycle_limit", "must be at least 1"));
        }
        if self.cache_capacity == 0 {
            return Err(field("cache_capacity", "must be at least 1"));
        }
        Ok(())
    }

    /// Simulator config; `groups` selects grouped fusion.
    pub fn to_sim(&self, groups: Option<GroupSpec>) -> Result<SimConfig, ConfigError> {
        self.validate()?;
        let fusion = match groups {
            Some(spec) => FusionPolicy::grouped(spec),
            None => FusionPolicy::default(),
        };
        Ok(SimConfig {
            world_size: self.world_size,
            steps: self.steps,
            warmup_steps: self.warmup_steps,
            cycle_time_ns: ms_to_ns(self.cycle_time_ms),
            coordinator: self.coordinator,
            fusion: FusionPolicy {
                fusion_buffer_bytes: self.fusion_buffer_bytes,
                ..fusion
            },
            cost: CostModel {
                alpha: self.alpha,
                beta: self.beta,
                algorithm: self.algorithm,
                tree_bandwidth_factor: self.tree_bandwidth_factor,
            },
            calibration: CoordinationCalibration {
                record_header_bytes: self.record_header_bytes,
                seconds_per_record: self.seconds_per_record,
            },
            seed: self.seed,
            t_misc_ns: ms_to_ns(self.t_misc_ms),
            stall_sigma_ns: self.stall_sigma_us * 1e3,
            cycle_limit: self.cycle_limit,
            cache_capacity: self.cache_capacity,
            ..SimConfig::default()
        })
    }
}
