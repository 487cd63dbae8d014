//! Baseline coordination: rank 0 gathers every rank's requests, forms
//! responses for tensors all ranks asked for, and broadcasts them in order.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use indexmap::IndexMap;
use thiserror::Error;

use crate::protocol::{merge_requests, CacheKey, MergeOutcome, ProtocolError, Request, Response};

/// Fixed per-record overhead charged on top of the tensor name when
/// serializing requests and responses.
pub const DEFAULT_RECORD_HEADER_BYTES: u64 = 24;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CoordinatorError {
    #[error("rank {rank} submitted `{name}` twice")]
    DuplicateSubmission { rank: usize, name: String },
    #[error("expected {expected} per-rank request lists, got {got}")]
    WrongRankCount { expected: usize, got: usize },
    #[error("request from rank {actual} found in the list of rank {expected}")]
    MisplacedRequest { expected: usize, actual: usize },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

/// Logical message counts, used for overhead accounting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MessageCounter {
    pub gathers: u64,
    pub broadcasts: u64,
    pub gathered_records: u64,
    pub gathered_bytes: u64,
    pub broadcast_records: u64,
    pub broadcast_bytes: u64,
}

/// What one gather + broadcast round moved; input to the cost model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RoundTraffic {
    pub gathered_records: u64,
    pub gathered_bytes: u64,
    pub broadcast_bytes: u64,
}

#[derive(Debug, Clone)]
pub struct CoordinatorState {
    world_size: usize,
    record_header_bytes: u64,
    /// Insertion order is coordinator first-arrival order.
    pending: IndexMap<CacheKey, Vec<Request>>,
    names: HashMap<String, CacheKey>,
    counter: MessageCounter,
    round: RoundTraffic,
}

impl CoordinatorState {
    pub fn new(world_size: usize) -> Self {
        Self::with_record_header(world_size, DEFAULT_RECORD_HEADER_BYTES)
    }

    pub fn with_record_header(world_size: usize, record_header_bytes: u64) -> Self {
        assert!(world_size > 0, "world size must be positive");
        CoordinatorState {
            world_size,
            record_header_bytes,
            pending: IndexMap::new(),
            names: HashMap::new(),
            counter: MessageCounter::default(),
            round: RoundTraffic::default(),
        }
    }

    pub fn world_size(&self) -> usize {
        self.world_size
    }

    pub fn counter(&self) -> MessageCounter {
        self.counter
    }

    pub fn pending(&self) -> &IndexMap<CacheKey, Vec<Request>> {
        &self.pending
    }

    pub fn is_idle(&self) -> bool {
        self.pending.is_empty()
    }

    fn record_bytes(&self, name: &str) -> u64 {
        self.record_header_bytes + name.len() as u64
    }

    /// Collects one cycle's requests, one list per rank (index = rank).
    ///
    /// Arrival order is rank-major, so simultaneous submissions are ordered
    /// by rank index. On error the state is left unchanged.
    pub fn gather(&mut self, rank_requests: &[Vec<Request>]) -> Result<(), CoordinatorError> {
        if rank_requests.len() != self.world_size {
            return Err(CoordinatorError::WrongRankCount {
                expected: self.world_size,
                got: rank_requests.len(),
            });
        }
        let keys: Vec<Vec<CacheKey>> = rank_requests
            .iter()
            .map(|list| list.iter().map(Request::key).collect())
            .collect();
        self.validate(rank_requests, &keys)?;

        let mut records = 0u64;
        let mut bytes = 0u64;
        for (list, keys) in rank_requests.iter().zip(keys) {
            for (req, key) in list.iter().zip(keys) {
                records += 1;
                bytes += self.record_bytes(req.tensor.name());
                if !self.names.contains_key(req.tensor.name()) {
                    self.names
                        .insert(req.tensor.name().to_string(), key.clone());
                }
                self.pending.entry(key).or_default().push(req.clone());
            }
        }
        self.counter.gathers += self.world_size as u64;
        self.counter.gathered_records += records;
        self.counter.gathered_bytes += bytes;
        self.round.gathered_records += records;
        self.round.gathered_bytes += bytes;
        Ok(())
    }

    fn validate(
        &self,
        rank_requests: &[Vec<Request>],
        keys: &[Vec<CacheKey>],
    ) -> Result<(), CoordinatorError> {
        for (rank, (list, keys)) in rank_requests.iter().zip(keys).enumerate() {
            let mut seen: HashSet<&CacheKey> = HashSet::with_capacity(list.len());
            for (req, key) in list.iter().zip(keys) {
                if req.rank != rank {
                    return Err(CoordinatorError::MisplacedRequest {
                        expected: rank,
                        actual: req.rank,
                    });
                }
                let duplicate = !seen.insert(key)
                    || self
                        .pending
                        .get(key)
                        .is_some_and(|reqs| reqs.iter().any(|r| r.rank == rank));
                if duplicate {
                    return Err(CoordinatorError::DuplicateSubmission {
                        rank,
                        name: req.tensor.name().to_string(),
                    });
                }
                if let Some(existing) = self.names.get(req.tensor.name()) {
                    if existing != key {
                        let first_rank = self.pending.get(existing).map_or(0, |r| r[0].rank);
                        return Err(ProtocolError::MetadataMismatch {
                            name: req.tensor.name().to_string(),
                            first_rank,
                            other_rank: rank,
                        }
                        .into());
                    }
                }
            }
        }
        // Cross-rank mismatches inside this same batch.
        let mut first: HashMap<&str, &Request> = HashMap::new();
        for req in rank_requests.iter().flatten() {
            match first.get(req.tensor.name()) {
                Some(prev) if !prev.same_operation(req) => {
                    return Err(ProtocolError::MetadataMismatch {
                        name: req.tensor.name().to_string(),
                        first_rank: prev.rank,
                        other_rank: req.rank,
                    }
                    .into())
                }
                Some(_) => {}
                None => {
                    first.insert(req.tensor.name(), req);
                }
            }
        }
        Ok(())
    }

    /// Forms responses for fully-submitted keys in first-arrival order and
    /// removes them from `pending`; incomplete keys wait for later cycles.
    pub fn form_and_order(&mut self) -> Result<Vec<Arc<Response>>, CoordinatorError> {
        let mut out = Vec::new();
        let mut done = HashSet::new();
        for (key, reqs) in &self.pending {
            if reqs.len() < self.world_size {
                continue;
            }
            match merge_requests(reqs, self.world_size)? {
                MergeOutcome::Complete(resp) => {
                    out.push(Arc::new(resp));
                    done.insert(key.clone());
                }
                MergeOutcome::Incomplete { .. } => {}
            }
        }
        if !done.is_empty() {
            self.pending.retain(|k, _| !done.contains(k));
            for resp in &out {
                self.names.remove(resp.first_name());
            }
        }
        let bytes: u64 = out
            .iter()
            .flat_map(|r| r.tensor_names.iter())
            .map(|n| self.record_bytes(n))
            .sum();
        self.counter.broadcasts += self.world_size as u64;
        self.counter.broadcast_records += out.len() as u64;
        self.counter.broadcast_bytes += bytes;
        self.round.broadcast_bytes += bytes;
        Ok(out)
    }

    /// Traffic accumulated since the last call.
    pub fn take_round_traffic(&mut self) -> RoundTraffic {
        std::mem::take(&mut self.round)
    }
}
