//! Shared coordination vocabulary: tensors, requests, responses and the
//! canonical cache key both coordinators agree on.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("tensor `{name}`: {reason}")]
    InvalidTensor { name: String, reason: String },
    #[error(
        "metadata mismatch for tensor `{name}` between rank {first_rank} and rank {other_rank}"
    )]
    MetadataMismatch {
        name: String,
        first_rank: usize,
        other_rank: usize,
    },
    #[error("requests for different tensors (`{0}` and `{1}`) cannot be merged")]
    KeyMismatch(String, String),
    #[error("rank {rank} submitted `{name}` more than once")]
    DuplicateRank { name: String, rank: usize },
    #[error("rank {rank} outside world of size {world_size}")]
    RankOutOfRange { rank: usize, world_size: usize },
    #[error("cannot merge an empty request list")]
    Empty,
}

/// Identity and size of one gradient tensor.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawTensorMeta", into = "RawTensorMeta")]
pub struct TensorMeta {
    name: String,
    shape: Vec<u64>,
    element_bytes: u32,
    num_elements: u64,
}

#[derive(Serialize, Deserialize)]
struct RawTensorMeta {
    name: String,
    shape: Vec<u64>,
    element_bytes: u32,
}

impl TryFrom<RawTensorMeta> for TensorMeta {
    type Error = ProtocolError;

    fn try_from(raw: RawTensorMeta) -> Result<Self, Self::Error> {
        TensorMeta::new(raw.name, raw.shape, raw.element_bytes)
    }
}

impl From<TensorMeta> for RawTensorMeta {
    fn from(meta: TensorMeta) -> Self {
        RawTensorMeta {
            name: meta.name,
            shape: meta.shape,
            element_bytes: meta.element_bytes,
        }
    }
}

impl TensorMeta {
    pub fn new(
        name: impl Into<String>,
        shape: Vec<u64>,
        element_bytes: u32,
    ) -> Result<Self, ProtocolError> {
        let name = name.into();
        let invalid = |reason: &str| ProtocolError::InvalidTensor {
            name: name.clone(),
            reason: reason.to_string(),
        };
        if name.is_empty() {
            return Err(invalid("empty name"));
        }
        if shape.is_empty() {
            return Err(invalid("empty shape"));
        }
        if shape.contains(&0) {
            return Err(invalid("zero-sized dimension"));
        }
        if element_bytes == 0 {
            return Err(invalid("element_bytes must be positive"));
        }
        let num_elements = shape
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| invalid("element count overflows u64"))?;
        num_elements
            .checked_mul(element_bytes as u64)
            .ok_or_else(|| invalid("byte size overflows u64"))?;
        Ok(TensorMeta {
            name,
            shape,
            element_bytes,
            num_elements,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[u64] {
        &self.shape
    }

    pub fn element_bytes(&self) -> u32 {
        self.element_bytes
    }

    pub fn num_elements(&self) -> u64 {
        self.num_elements
    }

    pub fn message_bytes(&self) -> u64 {
        self.num_elements * self.element_bytes as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CollectiveKind {
    Allreduce,
    Allgather,
    Broadcast,
}

impl CollectiveKind {
    fn tag(self) -> u8 {
        match self {
            CollectiveKind::Allreduce => 0,
            CollectiveKind::Allgather => 1,
            CollectiveKind::Broadcast => 2,
        }
    }
}

/// A worker's submission asking for a collective on one tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Request {
    pub rank: usize,
    pub tensor: Arc<TensorMeta>,
    pub kind: CollectiveKind,
}

impl Request {
    pub fn new(rank: usize, tensor: Arc<TensorMeta>, kind: CollectiveKind) -> Self {
        Request { rank, tensor, kind }
    }

    pub fn key(&self) -> CacheKey {
        request_key(self)
    }

    /// Request metadata equality with the rank ignored.
    pub fn same_operation(&self, other: &Request) -> bool {
        self.kind == other.kind
            && (Arc::ptr_eq(&self.tensor, &other.tensor) || self.tensor == other.tensor)
    }
}

/// Canonical, rank-independent serialization of a request.
///
/// Layout: `u32 name_len | name | u32 ndim | ndim * u64 | u32 element_bytes | u8 kind`,
/// all little-endian.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CacheKey(Arc<[u8]>);

impl CacheKey {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Debug for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let bytes = self.as_bytes();
        let len = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
        let name = String::from_utf8_lossy(&bytes[4..4 + len]);
        write!(f, "CacheKey({name}, {} bytes)", bytes.len())
    }
}

pub fn request_key(request: &Request) -> CacheKey {
    let meta = &request.tensor;
    let mut out = Vec::with_capacity(4 + meta.name.len() + 4 + 8 * meta.shape.len() + 5);
    out.extend_from_slice(&(meta.name.len() as u32).to_le_bytes());
    out.extend_from_slice(meta.name.as_bytes());
    out.extend_from_slice(&(meta.shape.len() as u32).to_le_bytes());
    for dim in &meta.shape {
        out.extend_from_slice(&dim.to_le_bytes());
    }
    out.extend_from_slice(&meta.element_bytes.to_le_bytes());
    out.push(request.kind.tag());
    CacheKey(out.into())
}

/// Compact set of worker ranks.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct RankSet {
    words: Vec<u64>,
    len: usize,
}

impl RankSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn full(world_size: usize) -> Self {
        let mut set = RankSet::new();
        for rank in 0..world_size {
            set.insert(rank);
        }
        set
    }

    /// Returns false if the rank was already present.
    pub fn insert(&mut self, rank: usize) -> bool {
        let (word, bit) = (rank / 64, rank % 64);
        if word >= self.words.len() {
            self.words.resize(word + 1, 0);
        }
        let mask = 1u64 << bit;
        if self.words[word] & mask != 0 {
            return false;
        }
        self.words[word] |= mask;
        self.len += 1;
        true
    }

    pub fn contains(&self, rank: usize) -> bool {
        self.words
            .get(rank / 64)
            .is_some_and(|w| w & (1u64 << (rank % 64)) != 0)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(i, &word)| {
            (0..64)
                .filter(move |b| word & (1u64 << b) != 0)
                .map(move |b| i * 64 + b)
        })
    }

    pub fn is_complete(&self, world_size: usize) -> bool {
        self.len == world_size && self.iter().all(|r| r < world_size)
    }
}

impl fmt::Debug for RankSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

impl FromIterator<usize> for RankSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        let mut set = RankSet::new();
        for rank in iter {
            set.insert(rank);
        }
        set
    }
}

/// Per-kind metadata gathered from all ranks that execution needs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AggregatedMeta {
    Allreduce,
    /// Element offset of each rank's contribution in the gathered buffer.
    Allgather {
        displacements: Vec<u64>,
    },
    Broadcast {
        root: usize,
    },
}

/// Broadcast root; the coordination layer never negotiates it.
pub const BROADCAST_ROOT: usize = 0;

/// An executable collective, formed once every rank has asked for it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Response {
    pub key: CacheKey,
    pub kind: CollectiveKind,
    pub tensor_names: Vec<String>,
    pub participating_ranks: RankSet,
    pub aggregated_meta: AggregatedMeta,
    pub message_bytes: u64,
}

impl Response {
    pub fn is_executable(&self, world_size: usize) -> bool {
        self.participating_ranks.is_complete(world_size)
    }

    pub fn first_name(&self) -> &str {
        &self.tensor_names[0]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MergeOutcome {
    Complete(Response),
    Incomplete { ranks: RankSet },
}

/// Combines the requests for one tensor into a response if all ranks asked.
pub fn merge_requests(
    requests: &[Request],
    world_size: usize,
) -> Result<MergeOutcome, ProtocolError> {
    // Pick the lowest rank as reference so the result is order-insensitive.
    let reference = requests
        .iter()
        .min_by_key(|r| r.rank)
        .ok_or(ProtocolError::Empty)?;
    let mut ranks = RankSet::new();
    for req in requests {
        if req.rank >= world_size {
            return Err(ProtocolError::RankOutOfRange {
                rank: req.rank,
                world_size,
            });
        }
        if req.tensor.name != reference.tensor.name {
            return Err(ProtocolError::KeyMismatch(
                reference.tensor.name.clone(),
                req.tensor.name.clone(),
            ));
        }
        if !req.same_operation(reference) {
            return Err(ProtocolError::MetadataMismatch {
                name: req.tensor.name.clone(),
                first_rank: reference.rank,
                other_rank: req.rank,
            });
        }
        if !ranks.insert(req.rank) {
            return Err(ProtocolError::DuplicateRank {
                name: req.tensor.name.clone(),
                rank: req.rank,
            });
        }
    }
    if ranks.len() < world_size {
        return Ok(MergeOutcome::Incomplete { ranks });
    }
    let meta = &reference.tensor;
    let aggregated_meta = match reference.kind {
        CollectiveKind::Allreduce => AggregatedMeta::Allreduce,
        CollectiveKind::Allgather => AggregatedMeta::Allgather {
            displacements: (0..world_size as u64)
                .map(|r| r * meta.num_elements)
                .collect(),
        },
        CollectiveKind::Broadcast => AggregatedMeta::Broadcast {
            root: BROADCAST_ROOT,
        },
    };
    Ok(MergeOutcome::Complete(Response {
        key: reference.key(),
        kind: reference.kind,
        tensor_names: vec![meta.name.clone()],
        participating_ranks: ranks,
        aggregated_meta,
        message_bytes: meta.message_bytes(),
    }))
}
