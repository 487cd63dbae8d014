//! Cached-response coordination: each worker marks its pending requests in a
//! bitvector indexed by a globally consistent response cache, the vectors are
//! combined with a single AND-reduction, and every worker decodes the common
//! set in cache bit order.
//!
//! The leading [`RESERVED_BITS`] positions carry status signals instead of
//! tensors. Status signals need OR semantics (any single worker raising one
//! must be seen by all) while payload bits need AND semantics. Workers put
//! status bits on the wire inverted, so one AND-reduction yields both.

use std::collections::HashSet;
use std::sync::Arc;

use indexmap::IndexMap;
use thiserror::Error;

use crate::master_worker::{CoordinatorError, CoordinatorState, RoundTraffic};
use crate::protocol::{CacheKey, Request, Response};

pub const RESERVED_BITS: usize = 2;
pub const CACHE_MISS_BIT: usize = 0;
pub const SHUTDOWN_BIT: usize = 1;
pub const WORD_BITS: usize = 64;
pub const DEFAULT_CACHE_CAPACITY: usize = 4096;

const STATUS_MASK: u64 = (1u64 << RESERVED_BITS) - 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BitvectorError {
    #[error("response cache is full ({capacity} entries)")]
    CapacityExceeded { capacity: usize },
    #[error("bitvectors differ in capacity ({expected} vs {found} bits)")]
    CapacityMismatch { expected: usize, found: usize },
    #[error("bit {bit} is set but has no cache entry; caches have diverged")]
    UnknownBit { bit: usize },
    #[error("nothing to intersect")]
    NoVectors,
    #[error(transparent)]
    Coordinator(#[from] CoordinatorError),
}

/// Number of 64-bit words needed for a cache of `capacity` entries plus the
/// status bits.
pub fn words_for_capacity(capacity: usize) -> usize {
    (capacity + RESERVED_BITS).div_ceil(WORD_BITS)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Bitvector {
    words: Vec<u64>,
}

impl Bitvector {
    pub fn zeroed(words: usize) -> Self {
        Bitvector {
            words: vec![0; words],
        }
    }

    pub fn for_cache_capacity(capacity: usize) -> Self {
        Self::zeroed(words_for_capacity(capacity))
    }

    pub fn capacity_bits(&self) -> usize {
        self.words.len() * WORD_BITS
    }

    pub fn byte_len(&self) -> u64 {
        (self.words.len() * 8) as u64
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn set(&mut self, bit: usize) {
        self.words[bit / WORD_BITS] |= 1u64 << (bit % WORD_BITS);
    }

    pub fn get(&self, bit: usize) -> bool {
        self.words
            .get(bit / WORD_BITS)
            .is_some_and(|w| w & (1u64 << (bit % WORD_BITS)) != 0)
    }

    pub fn cache_miss(&self) -> bool {
        self.get(CACHE_MISS_BIT)
    }

    pub fn shutdown(&self) -> bool {
        self.get(SHUTDOWN_BIT)
    }

    /// Set payload bit positions in ascending order.
    pub fn payload_bits(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(i, &word)| {
            let word = if i == 0 { word & !STATUS_MASK } else { word };
            BitIter(word).map(move |b| i * WORD_BITS + b)
        })
    }

    fn to_wire(&self) -> Vec<u64> {
        let mut words = self.words.clone();
        if let Some(first) = words.first_mut() {
            *first ^= STATUS_MASK;
        }
        words
    }

    fn from_wire(mut words: Vec<u64>) -> Self {
        if let Some(first) = words.first_mut() {
            *first ^= STATUS_MASK;
        }
        Bitvector { words }
    }
}

struct BitIter(u64);

impl Iterator for BitIter {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        if self.0 == 0 {
            return None;
        }
        let bit = self.0.trailing_zeros() as usize;
        self.0 &= self.0 - 1;
        Some(bit)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StatusSignals {
    pub shutdown: bool,
}

/// Per-worker map from request key to (bit position, response).
#[derive(Debug, Clone)]
pub struct ResponseCache {
    entries: IndexMap<CacheKey, (usize, Arc<Response>)>,
    by_bit: Vec<Arc<Response>>,
    capacity: usize,
}

impl Default for ResponseCache {
    fn default() -> Self {
        Self::with_capacity(DEFAULT_CACHE_CAPACITY)
    }
}

impl ResponseCache {
    pub fn with_capacity(capacity: usize) -> Self {
        ResponseCache {
            entries: IndexMap::new(),
            by_bit: Vec::new(),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn next_bit(&self) -> usize {
        RESERVED_BITS + self.by_bit.len()
    }

    pub fn bit_of(&self, key: &CacheKey) -> Option<usize> {
        self.entries.get(key).map(|(bit, _)| *bit)
    }

    pub fn response_at(&self, bit: usize) -> Option<&Arc<Response>> {
        bit.checked_sub(RESERVED_BITS)
            .and_then(|i| self.by_bit.get(i))
    }

    /// Key to bit position, in insertion order.
    pub fn positions(&self) -> impl Iterator<Item = (&CacheKey, usize)> {
        self.entries.iter().map(|(k, (bit, _))| (k, *bit))
    }

    pub fn empty_vector(&self) -> Bitvector {
        Bitvector::for_cache_capacity(self.capacity)
    }
}

/// Inserts a response, returning its bit. Re-inserting a key is a no-op
/// that returns the original position.
pub fn cache_insert(
    cache: &mut ResponseCache,
    response: Arc<Response>,
) -> Result<usize, BitvectorError> {
    if let Some((bit, _)) = cache.entries.get(&response.key) {
        return Ok(*bit);
    }
    if cache.entries.len() >= cache.capacity {
        return Err(BitvectorError::CapacityExceeded {
            capacity: cache.capacity,
        });
    }
    let bit = cache.next_bit();
    cache
        .entries
        .insert(response.key.clone(), (bit, response.clone()));
    cache.by_bit.push(response);
    Ok(bit)
}

pub fn populate<'a>(
    cache: &ResponseCache,
    pending: impl IntoIterator<Item = &'a CacheKey>,
    signals: StatusSignals,
) -> Bitvector {
    let mut vector = cache.empty_vector();
    for key in pending {
        match cache.bit_of(key) {
            Some(bit) => vector.set(bit),
            None => vector.set(CACHE_MISS_BIT),
        }
    }
    if signals.shutdown {
        vector.set(SHUTDOWN_BIT);
    }
    vector
}

/// AND across payload bits, OR across status bits, as one AND-reduction.
pub fn intersect(vectors: &[Bitvector]) -> Result<Bitvector, BitvectorError> {
    let first = vectors.first().ok_or(BitvectorError::NoVectors)?;
    let mut acc = first.to_wire();
    for v in &vectors[1..] {
        if v.words.len() != acc.len() {
            return Err(BitvectorError::CapacityMismatch {
                expected: acc.len() * WORD_BITS,
                found: v.capacity_bits(),
            });
        }
        for (a, w) in acc.iter_mut().zip(v.to_wire()) {
            *a &= w;
        }
    }
    Ok(Bitvector::from_wire(acc))
}

pub fn decode(
    cache: &ResponseCache,
    intersected: &Bitvector,
) -> Result<Vec<Arc<Response>>, BitvectorError> {
    intersected
        .payload_bits()
        .map(|bit| {
            cache
                .response_at(bit)
                .cloned()
                .ok_or(BitvectorError::UnknownBit { bit })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CoordPath {
    Fast,
    Fallback,
}

/// One worker's coordination state.
#[derive(Debug, Clone)]
pub struct BitvectorWorker {
    rank: usize,
    cache: ResponseCache,
    pending: IndexMap<CacheKey, Request>,
    /// Uncached requests already handed to the coordinator.
    submitted: HashSet<CacheKey>,
    shutting_down: bool,
}

impl BitvectorWorker {
    pub fn new(rank: usize, cache_capacity: usize) -> Self {
        BitvectorWorker {
            rank,
            cache: ResponseCache::with_capacity(cache_capacity),
            pending: IndexMap::new(),
            submitted: HashSet::new(),
            shutting_down: false,
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    /// Queues a request; the rank must match this worker.
    pub fn submit(&mut self, request: Request) {
        debug_assert_eq!(request.rank, self.rank);
        self.pending.insert(request.key(), request);
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn has_pending(&self, key: &CacheKey) -> bool {
        self.pending.contains_key(key)
    }

    pub fn begin_shutdown(&mut self) {
        self.shutting_down = true;
    }

    fn bitvector(&self) -> Bitvector {
        let keys = self.pending.keys().filter(|k| !self.submitted.contains(*k));
        populate(
            &self.cache,
            keys,
            StatusSignals {
                shutdown: self.shutting_down,
            },
        )
    }

    fn take_unsubmitted_uncached(&mut self) -> Vec<Request> {
        let mut out = Vec::new();
        for (key, req) in &self.pending {
            if self.cache.bit_of(key).is_none() && self.submitted.insert(key.clone()) {
                out.push(req.clone());
            }
        }
        out
    }

    fn complete(&mut self, responses: &[Arc<Response>]) {
        if responses.is_empty() {
            return;
        }
        let done: HashSet<&CacheKey> = responses.iter().map(|r| &r.key).collect();
        self.pending.retain(|k, _| !done.contains(k));
        for key in done {
            self.submitted.remove(key);
        }
    }
}

#[derive(Debug, Clone)]
pub struct CycleOutcome {
    pub path: CoordPath,
    /// Responses each rank executes this cycle, in execution order.
    pub per_rank: Vec<Vec<Arc<Response>>>,
    pub shutdown: bool,
    /// Bytes moved by the single AND-reduction.
    pub vector_bytes: u64,
    /// Traffic of the master-worker round, on the fallback path only.
    pub fallback_traffic: Option<RoundTraffic>,
}

/// Runs one coordination cycle across all workers.
///
/// Fast path: one intersection, every worker decodes. When any worker has an
/// uncached request the intersection carries CACHE_MISS and a master-worker
/// round runs for the uncached requests only; its responses are inserted
/// into every cache in broadcast order and execute after the cached common
/// set of the same cycle.
pub fn coordinate_cycle(
    workers: &mut [BitvectorWorker],
    fallback: &mut CoordinatorState,
) -> Result<CycleOutcome, BitvectorError> {
    let vectors: Vec<Bitvector> = workers.iter().map(BitvectorWorker::bitvector).collect();
    let combined = intersect(&vectors)?;
    let vector_bytes = combined.byte_len();

    let mut per_rank = Vec::with_capacity(workers.len());
    for worker in workers.iter() {
        per_rank.push(decode(&worker.cache, &combined)?);
    }

    let mut path = CoordPath::Fast;
    let mut fallback_traffic = None;
    if combined.cache_miss() {
        path = CoordPath::Fallback;
        let lists: Vec<Vec<Request>> = workers
            .iter_mut()
            .map(BitvectorWorker::take_unsubmitted_uncached)
            .collect();
        fallback.gather(&lists)?;
        let fresh = fallback.form_and_order()?;
        for (worker, list) in workers.iter_mut().zip(per_rank.iter_mut()) {
            for resp in &fresh {
                cache_insert(&mut worker.cache, resp.clone())?;
            }
            list.extend(fresh.iter().cloned());
        }
        fallback_traffic = Some(fallback.take_round_traffic());
    }

    for (worker, list) in workers.iter_mut().zip(&per_rank) {
        worker.complete(list);
    }

    Ok(CycleOutcome {
        path,
        per_rank,
        shutdown: combined.shutdown(),
        vector_bytes,
        fallback_traffic,
    })
}
