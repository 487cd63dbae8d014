//! Collective execution: reference reduction semantics and alpha-beta cost
//! models for ring and double-binary-tree allreduce.
//!
//! The cost formulas are standard latency/bandwidth calibration models, not
//! measurements:
//!
//! * ring: `2(P-1)·α + 2·((P-1)/P)·n·β`
//! * double binary tree: `2·⌈log2 P⌉·α + 2·n·β·f` with bandwidth factor `f`

use std::ops::Add;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::master_worker::RoundTraffic;

pub const DEFAULT_ALPHA: f64 = 5e-6;
pub const DEFAULT_BETA: f64 = 1.0 / 12.5e9;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("payload length mismatch: worker 0 has {expected}, worker {worker} has {found}")]
    LengthMismatch {
        worker: usize,
        expected: usize,
        found: usize,
    },
    #[error("no payloads to reduce")]
    NoPayloads,
    #[error("invalid cost model: {0}")]
    InvalidModel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Ring,
    DoubleBinaryTree,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    /// Per-hop latency, seconds.
    pub alpha: f64,
    /// Seconds per byte.
    pub beta: f64,
    pub algorithm: Algorithm,
    pub tree_bandwidth_factor: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            algorithm: Algorithm::DoubleBinaryTree,
            tree_bandwidth_factor: 1.0,
        }
    }
}

impl CostModel {
    pub fn new(alpha: f64, beta: f64, algorithm: Algorithm) -> Result<Self, BackendError> {
        let model = CostModel {
            alpha,
            beta,
            algorithm,
            tree_bandwidth_factor: 1.0,
        };
        model.validate()?;
        Ok(model)
    }

    /// A free network; useful for isolating compute effects.
    pub fn zero() -> Self {
        CostModel {
            alpha: 0.0,
            beta: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(BackendError::InvalidModel(format!(
                "alpha = {}",
                self.alpha
            )));
        }
        // beta == 0 is accepted for idealized runs.
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(BackendError::InvalidModel(format!("beta = {}", self.beta)));
        }
        if !(self.tree_bandwidth_factor > 0.0 && self.tree_bandwidth_factor.is_finite()) {
            return Err(BackendError::InvalidModel(format!(
                "tree_bandwidth_factor = {}",
                self.tree_bandwidth_factor
            )));
        }
        Ok(())
    }

    /// Latency part of one allreduce.
    pub fn latency_term(&self, world_size: usize) -> f64 {
        if world_size <= 1 {
            return 0.0;
        }
        match self.algorithm {
            Algorithm::Ring => 2.0 * (world_size - 1) as f64 * self.alpha,
            Algorithm::DoubleBinaryTree => 2.0 * ceil_log2(world_size) as f64 * self.alpha,
        }
    }
}

pub fn ceil_log2(n: usize) -> u32 {
    if n <= 1 {
        0
    } else {
        usize::BITS - (n - 1).leading_zeros()
    }
}

/// Time for one allreduce of `message_bytes` across `world_size` workers.
pub fn collective_cost(model: &CostModel, message_bytes: u64, world_size: usize) -> f64 {
    if world_size <= 1 {
        return 0.0;
    }
    let p = world_size as f64;
    let n = message_bytes as f64;
    let bandwidth = match model.algorithm {
        Algorithm::Ring => 2.0 * ((p - 1.0) / p) * n * model.beta,
        Algorithm::DoubleBinaryTree => 2.0 * n * model.beta * model.tree_bandwidth_factor,
    };
    model.latency_term(world_size) + bandwidth
}

/// Coordinator-side knobs of the master-worker round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoordinationCalibration {
    /// Serialized size of a request/response record beyond its name.
    pub record_header_bytes: u64,
    /// Coordinator processing time per gathered request record, seconds.
    pub seconds_per_record: f64,
}

pub const DEFAULT_SECONDS_PER_RECORD: f64 = 4e-6;

impl Default for CoordinationCalibration {
    fn default() -> Self {
        CoordinationCalibration {
            record_header_bytes: crate::master_worker::DEFAULT_RECORD_HEADER_BYTES,
            seconds_per_record: DEFAULT_SECONDS_PER_RECORD,
        }
    }
}

/// What a coordination round had to move.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordinationLoad {
    MasterWorker(RoundTraffic),
    /// One allreduce of the bitvector's word array.
    Bitvector {
        vector_bytes: u64,
    },
}

/// Time spent coordinating one cycle.
///
/// Master-worker: a gather (tree-depth latency plus every gathered byte
/// through the root) and a broadcast of the response list, plus the
/// coordinator's per-record processing. Bitvector: one allreduce.
pub fn coordination_cost(
    model: &CostModel,
    calibration: &CoordinationCalibration,
    load: CoordinationLoad,
    world_size: usize,
) -> f64 {
    match load {
        CoordinationLoad::Bitvector { vector_bytes } => {
            collective_cost(model, vector_bytes, world_size)
        }
        CoordinationLoad::MasterWorker(traffic) => {
            let processing = traffic.gathered_records as f64 * calibration.seconds_per_record;
            if world_size <= 1 {
                return processing;
            }
            let depth = ceil_log2(world_size) as f64 * model.alpha;
            let gather = depth + traffic.gathered_bytes as f64 * model.beta;
            let broadcast = depth + traffic.broadcast_bytes as f64 * model.beta;
            gather + processing + broadcast
        }
    }
}

/// Elementwise sum over workers; every worker receives this result.
pub fn reduce_oracle<T>(payloads: &[Vec<T>]) -> Result<Vec<T>, BackendError>
where
    T: Copy + Add<Output = T>,
{
    let first = payloads.first().ok_or(BackendError::NoPayloads)?;
    let mut acc = first.clone();
    for (worker, p) in payloads.iter().enumerate().skip(1) {
        if p.len() != acc.len() {
            return Err(BackendError::LengthMismatch {
                worker,
                expected: acc.len(),
                found: p.len(),
            });
        }
        for (a, &x) in acc.iter_mut().zip(p) {
            *a = *a + x;
        }
    }
    Ok(acc)
}

/// Relative comparison for float reductions, whose order is unspecified.
pub fn approx_eq_rel(a: f64, b: f64, rel: f64) -> bool {
    if a == b {
        return true;
    }
    (a - b).abs() <= rel * a.abs().max(b.abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sums_two_workers() {
        assert_eq!(
            reduce_oracle(&[vec![1, 2], vec![3, 4]]).unwrap(),
            vec![4, 6]
        );
    }

    #[test]
    fn single_worker_identity() {
        assert_eq!(reduce_oracle(&[vec![7i64, -2]]).unwrap(), vec![7, -2]);
    }

    #[test]
    fn length_mismatch() {
        assert_eq!(
            reduce_oracle(&[vec![1], vec![1, 2]]),
            Err(BackendError::LengthMismatch {
                worker: 1,
                expected: 1,
                found: 2
            })
        );
        assert_eq!(reduce_oracle::<i32>(&[]), Err(BackendError::NoPayloads));
    }

    #[test]
    fn float_reduction_within_tolerance() {
        let payloads = vec![vec![0.1f64, 1e8], vec![0.2, 1.0], vec![0.3, -1e8]];
        let got = reduce_oracle(&payloads).unwrap();
        assert!(approx_eq_rel(got[0], 0.6, 1e-6));
        assert!(!approx_eq_rel(1.0, 1.1, 1e-6));
    }

    #[test]
    fn single_worker_costs_nothing() {
        for algorithm in [Algorithm::Ring, Algorithm::DoubleBinaryTree] {
            let m = CostModel::new(1e-3, 1e-3, algorithm).unwrap();
            assert_eq!(collective_cost(&m, 1 << 30, 1), 0.0);
        }
    }

    #[test]
    fn ring_arithmetic() {
        let m = CostModel::new(1e-6, 1e-9, Algorithm::Ring).unwrap();
        let got = collective_cost(&m, 1000, 4);
        assert!((got - 7.5e-6).abs() < 1e-18, "{got}");
    }

    #[test]
    fn tree_arithmetic() {
        let m = CostModel::new(1e-6, 1e-9, Algorithm::DoubleBinaryTree).unwrap();
        // ceil(log2 5) = 3
        let got = collective_cost(&m, 1000, 5);
        assert!((got - (6e-6 + 2e-6)).abs() < 1e-18, "{got}");
    }

    #[test]
    fn tree_latency_beats_ring_from_eight_workers() {
        let ring = CostModel::new(DEFAULT_ALPHA, DEFAULT_BETA, Algorithm::Ring).unwrap();
        let tree =
            CostModel::new(DEFAULT_ALPHA, DEFAULT_BETA, Algorithm::DoubleBinaryTree).unwrap();
        for p in 8..=4096 {
            assert!(tree.latency_term(p) < ring.latency_term(p), "P={p}");
        }
    }

    #[test]
    fn ceil_log2_values() {
        let got: Vec<u32> = [1, 2, 3, 4, 5, 8, 9, 1024, 1025].map(ceil_log2).to_vec();
        assert_eq!(got, vec![0, 1, 2, 2, 3, 3, 4, 10, 11]);
    }

    #[test]
    fn empty_master_worker_round_pays_two_latency_sweeps() {
        let m = CostModel::default();
        let cal = CoordinationCalibration::default();
        let got = coordination_cost(
            &m,
            &cal,
            CoordinationLoad::MasterWorker(RoundTraffic::default()),
            16,
        );
        assert!((got - 2.0 * 4.0 * DEFAULT_ALPHA).abs() < 1e-18);
    }

    #[test]
    fn bitvector_round_is_one_allreduce() {
        let m = CostModel::default();
        let cal = CoordinationCalibration::default();
        let bytes = crate::bitvector::Bitvector::for_cache_capacity(4096).byte_len();
        assert_eq!(bytes, 520);
        for p in [2, 64, 1024] {
            assert_eq!(
                coordination_cost(
                    &m,
                    &cal,
                    CoordinationLoad::Bitvector {
                        vector_bytes: bytes
                    },
                    p
                ),
                collective_cost(&m, bytes, p)
            );
        }
    }

    #[test]
    fn invalid_models() {
        assert!(CostModel::new(-1.0, 1e-9, Algorithm::Ring).is_err());
        assert!(CostModel::new(0.0, f64::NAN, Algorithm::Ring).is_err());
        let m = CostModel {
            tree_bandwidth_factor: 0.0,
            ..Default::default()
        };
        assert!(m.validate().is_err());
    }
}
