//! Scaling-efficiency sweeps over worker counts and coordination strategies.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run, CoordinatorKind, SimConfig, SimError, SimMetrics};
use crate::fusion::{equal_byte_groups, FusionPolicy, GroupSpec};
use crate::workload::WorkloadGraph;

/// Number of groups used when the workload carries no group spec.
pub const DEFAULT_GROUP_COUNT: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    MasterWorker,
    Bitvector,
    BitvectorGrouped,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [
        Strategy::MasterWorker,
        Strategy::Bitvector,
        Strategy::BitvectorGrouped,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::MasterWorker => "master-worker",
            Strategy::Bitvector => "bitvector",
            Strategy::BitvectorGrouped => "bitvector-grouped",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| {
                format!(
                    "unknown strategy `{s}` (master-worker | bitvector | bitvector-grouped | all)"
                )
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub strategy: Strategy,
    #[serde(rename = "P")]
    pub world_size: usize,
    pub throughput_per_s: f64,
    pub efficiency: f64,
    pub t_comm_ms_mean: f64,
    pub t_comp_ms_mean: f64,
}

pub const CSV_HEADER: &str = "strategy,P,throughput_per_s,efficiency,t_comm_ms_mean,t_comp_ms_mean";

impl SweepRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{:.6},{:.6}",
            self.strategy,
            self.world_size,
            self.throughput_per_s,
            self.efficiency,
            self.t_comm_ms_mean,
            self.t_comp_ms_mean
        )
    }
}

/// Group spec for the grouped strategy: the workload's own, or equal-byte
/// groups along the backprop order.
pub fn default_groups(workload: &WorkloadGraph, groups: usize) -> Result<GroupSpec, SimError> {
    match workload.groups() {
        Some(spec) => Ok(spec.clone()),
        None => Ok(equal_byte_groups(&workload.backprop_tensors(), groups)?),
    }
}

/// Config for one strategy; everything but coordinator and fusion mode is
/// taken from `base`.
pub fn strategy_config(base: &SimConfig, strategy: Strategy, groups: &GroupSpec) -> SimConfig {
    let mut config = base.clone();
    let buffer = base.fusion.fusion_buffer_bytes;
    match strategy {
        Strategy::MasterWorker | Strategy::Bitvector => {
            config.coordinator = if strategy == Strategy::MasterWorker {
                CoordinatorKind::MasterWorker
            } else {
                CoordinatorKind::Bitvector
            };
            config.fusion = FusionPolicy {
                fusion_buffer_bytes: buffer,
                ..FusionPolicy::default()
            };
        }
        Strategy::BitvectorGrouped => {
            config.coordinator = CoordinatorKind::Bitvector;
            config.fusion = FusionPolicy {
                fusion_buffer_bytes: buffer,
                ..FusionPolicy::grouped(groups.clone())
            };
        }
    }
    config
}

/// Runs every (strategy, P) point in parallel. P = 1 is always included as
/// the efficiency baseline. Rows are sorted by (strategy, P).
pub fn efficiency_sweep(
    base: &SimConfig,
    workload: &WorkloadGraph,
    world_sizes: &[usize],
    strategies: &[Strategy],
    groups: &GroupSpec,
) -> Result<Vec<SweepRow>, SimError> {
    let mut sizes: Vec<usize> = world_sizes.to_vec();
    sizes.push(1);
    sizes.sort_unstable();
    sizes.dedup();
    let mut strategies = strategies.to_vec();
    strategies.sort_unstable();
    strategies.dedup();

    let points: Vec<(Strategy, usize)> = strategies
        .iter()
        .flat_map(|&s| sizes.iter().map(move |&p| (s, p)))
        .collect();
    let results: Vec<((Strategy, usize), SimMetrics)> = points
        .par_iter()
        .map(|&(strategy, p)| {
            let mut config = strategy_config(base, strategy, groups);
            config.world_size = p;
            config.record_events = false;
            config.record_sequences = false;
            run(&config, workload).map(|m| ((strategy, p), m))
        })
        .collect::<Result<_, _>>()?;

    let mut rows: Vec<SweepRow> = results
        .iter()
        .map(|((strategy, p), m)| {
            let single = results
                .iter()
                .find(|((s, q), _)| s == strategy && *q == 1)
                .map(|(_, m)| m)
                .expect("P = 1 is always swept");
            SweepRow {
                strategy: *strategy,
                world_size: *p,
                throughput_per_s: m.throughput_per_s,
                efficiency: if *p == 1 {
                    1.0
                } else {
                    m.efficiency_vs(single)
                },
                t_comm_ms_mean: m.mean_t_comm_ns * 1e-6,
                t_comp_ms_mean: m.mean_t_comp_ns * 1e-6,
            }
        })
        .collect();
    rows.sort_by_key(|r| (r.strategy, r.world_size));
    Ok(rows)
}
