//! Deterministic discrete-event simulation of `P` data-parallel workers.
//!
//! Every step, each worker's gradients become ready in backprop order at
//! jittered times. A background coordination loop ticks every `cycle_time`:
//! it coordinates (master-worker or bitvector), fuses the released responses
//! and executes the fused collectives one after another. The next tick fires
//! `cycle_time` after the previous one started, or as soon as its work
//! finishes if that took longer. A step ends when every tensor has been
//! reduced on every worker; steps are separated by a barrier.
//!
//! Collectives are synchronous across workers, so the loop runs on one
//! global clock while coordination, caching and fusion state is kept per
//! worker. Every cycle the fused batch lists of all workers are compared;
//! any difference is reported as [`SimError::Divergence`], the state in
//! which a real system would deadlock.

pub mod sweep;
pub mod timeline;

use std::collections::HashMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{
    collective_cost, coordination_cost, reduce_oracle, BackendError, CoordinationCalibration,
    CoordinationLoad, CostModel,
};
use crate::bitvector::{
    coordinate_cycle, BitvectorError, BitvectorWorker, CoordPath, DEFAULT_CACHE_CAPACITY,
};
use crate::fusion::{Fuser, FusionBatch, FusionError, FusionPolicy};
use crate::master_worker::{CoordinatorError, CoordinatorState, MessageCounter, RoundTraffic};
use crate::protocol::{CollectiveKind, Request, Response};
use crate::workload::WorkloadGraph;

pub use timeline::{write_timeline, Event, EventKind, TimelineFormat};

pub const DEFAULT_CYCLE_TIME_NS: u64 = 1_000_000;
pub const DEFAULT_CYCLE_LIMIT: u64 = 1_000_000;
pub const DEFAULT_STALL_SIGMA_NS: f64 = 20_000.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error(
        "deadlock detected in step {step}: {pending} tensors still pending after {cycles} cycles"
    )]
    DeadlockDetected {
        step: usize,
        cycles: u64,
        pending: usize,
    },
    #[error(
        "worker {worker} executed a different collective sequence than worker 0 in step {step}"
    )]
    Divergence { step: usize, worker: usize },
    #[error("tensor `{name}` reduced twice in step {step}")]
    DuplicateExecution { step: usize, name: String },
    #[error("reduction of `{name}` disagrees with the reference sum in step {step}")]
    PayloadMismatch { step: usize, name: String },
    #[error(transparent)]
    Coordinator(#[from] CoordinatorError),
    #[error(transparent)]
    Bitvector(#[from] BitvectorError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoordinatorKind {
    MasterWorker,
    Bitvector,
}

impl std::str::FromStr for CoordinatorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "master-worker" => Ok(CoordinatorKind::MasterWorker),
            "bitvector" => Ok(CoordinatorKind::Bitvector),
            other => Err(format!(
                "unknown coordinator `{other}` (master-worker | bitvector)"
            )),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub world_size: usize,
    pub steps: usize,
    /// Leading steps left out of throughput and per-step means.
    pub warmup_steps: usize,
    pub cycle_time_ns: u64,
    pub coordinator: CoordinatorKind,
    pub fusion: FusionPolicy,
    pub cost: CostModel,
    pub calibration: CoordinationCalibration,
    pub seed: u64,
    pub t_misc_ns: u64,
    /// Per-worker timing noise at each blocking collective. Every executed
    /// batch delays each worker's remaining backprop by the expected wait
    /// for the slowest worker, see [`collective_stall_ns`].
    pub stall_sigma_ns: f64,
    pub cycle_limit: u64,
    pub cache_capacity: usize,
    pub record_events: bool,
    pub record_sequences: bool,
    /// Reduce integer payloads for every tensor and check them against a
    /// sequential sum.
    pub check_payloads: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            world_size: 1,
            steps: 10,
            warmup_steps: 1,
            cycle_time_ns: DEFAULT_CYCLE_TIME_NS,
            coordinator: CoordinatorKind::Bitvector,
            fusion: FusionPolicy::default(),
            cost: CostModel::default(),
            calibration: CoordinationCalibration::default(),
            seed: 0,
            t_misc_ns: 0,
            stall_sigma_ns: DEFAULT_STALL_SIGMA_NS,
            cycle_limit: DEFAULT_CYCLE_LIMIT,
            cache_capacity: DEFAULT_CACHE_CAPACITY,
            record_events: false,
            record_sequences: false,
            check_payloads: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self, workload: &WorkloadGraph) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.to_string()));
        if self.world_size == 0 {
            return bad("world_size must be at least 1");
        }
        if self.steps == 0 {
            return bad("steps must be at least 1");
        }
        if self.cycle_time_ns == 0 {
            return bad("cycle_time must be positive");
        }
        if self.cycle_limit == 0 {
            return bad("cycle_limit must be positive");
        }
        if self.coordinator == CoordinatorKind::Bitvector && workload.len() > self.cache_capacity {
            return Err(SimError::Config(format!(
                "workload has {} tensors but the response cache holds {}",
                workload.len(),
                self.cache_capacity
            )));
        }
        self.cost
            .validate()
            .map_err(|e| SimError::Config(e.to_string()))?;
        if !(self.stall_sigma_ns >= 0.0 && self.stall_sigma_ns.is_finite()) {
            return bad("stall_sigma must be a nonnegative number");
        }
        if !(self.calibration.seconds_per_record >= 0.0
            && self.calibration.seconds_per_record.is_finite())
        {
            return bad("seconds_per_record must be a nonnegative number");
        }
        self.fusion
            .validate(workload.tensors().iter().map(|t| &**t))
            .map_err(|e| SimError::Config(e.to_string()))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepMetrics {
    pub step: usize,
    pub t_exec_ns: u64,
    /// Mean over workers of time blocked on communication after compute.
    pub t_comm_ns: f64,
    /// Mean over workers of compute time.
    pub t_comp_ns: f64,
    pub t_misc_ns: u64,
    pub cycles: u64,
    pub fast_cycles: u64,
    pub fallback_cycles: u64,
    pub batches: u64,
    pub min_batch_bytes: u64,
    pub coordination_ns: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimMetrics {
    pub world_size: usize,
    pub coordinator: CoordinatorKind,
    pub grouped: bool,
    pub warmup_steps: usize,
    pub steps: Vec<StepMetrics>,
    /// Inputs per second (one input per worker per step).
    pub throughput_per_s: f64,
    pub mean_t_exec_ns: f64,
    pub mean_t_comm_ns: f64,
    pub mean_t_comp_ns: f64,
    pub master_worker_messages: MessageCounterView,
    #[serde(skip)]
    pub events: Vec<Event>,
    /// `sequences[step][worker]`: tensor indices in execution order.
    #[serde(skip)]
    pub sequences: Vec<Vec<Vec<u32>>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct MessageCounterView {
    pub gathers: u64,
    pub broadcasts: u64,
    pub gathered_records: u64,
    pub gathered_bytes: u64,
    pub broadcast_bytes: u64,
}

impl From<MessageCounter> for MessageCounterView {
    fn from(c: MessageCounter) -> Self {
        MessageCounterView {
            gathers: c.gathers,
            broadcasts: c.broadcasts,
            gathered_records: c.gathered_records,
            gathered_bytes: c.gathered_bytes,
            broadcast_bytes: c.broadcast_bytes,
        }
    }
}

impl SimMetrics {
    /// Steps counted in the averages.
    pub fn measured_steps(&self) -> &[StepMetrics] {
        if self.steps.len() > self.warmup_steps {
            &self.steps[self.warmup_steps..]
        } else {
            &self.steps
        }
    }

    pub fn fallback_cycles(&self) -> u64 {
        self.steps.iter().map(|s| s.fallback_cycles).sum()
    }

    /// Steps that needed at least one fallback round.
    pub fn fallback_steps(&self) -> Vec<usize> {
        self.steps
            .iter()
            .filter(|s| s.fallback_cycles > 0)
            .map(|s| s.step)
            .collect()
    }

    /// Throughput relative to perfect scaling of a single-worker baseline.
    pub fn efficiency_vs(&self, single_worker: &SimMetrics) -> f64 {
        self.throughput_per_s / (self.world_size as f64 * single_worker.throughput_per_s)
    }
}

fn secs_to_ns(seconds: f64) -> u64 {
    (seconds * 1e9).round() as u64
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream_seed(seed: u64, step: usize, worker: usize) -> u64 {
    splitmix(splitmix(splitmix(seed) ^ step as u64) ^ worker as u64)
}

/// Integer gradient payload of one worker for one tensor.
pub fn payload(seed: u64, step: usize, worker: usize, tensor: usize, len: usize) -> Vec<i64> {
    let base = splitmix(
        stream_seed(seed, step, worker) ^ (tensor as u64).wrapping_mul(0x2545_F491_4F6C_DD1D),
    );
    (0..len)
        .map(|j| (splitmix(base ^ j as u64) % 2001) as i64 - 1000)
        .collect()
}

const PAYLOAD_LEN: u64 = 4;

/// Expected wait for the slowest of `P` workers at a blocking collective,
/// `σ·sqrt(2 ln P)`, with per-worker noise of standard deviation `σ`.
pub fn collective_stall_ns(sigma_ns: f64, world_size: usize) -> u64 {
    if world_size <= 1 || sigma_ns <= 0.0 {
        return 0;
    }
    (sigma_ns * (2.0 * (world_size as f64).ln()).sqrt()).round() as u64
}

/// Ready time of a gradient after the stalls of every batch that started
/// before it. `stalled` counts batches already applied and only grows.
fn stalled_arrival(raw: u64, stall_ns: u64, batch_starts: &[u64], stalled: &mut usize) -> u64 {
    while *stalled < batch_starts.len() && batch_starts[*stalled] < raw + *stalled as u64 * stall_ns
    {
        *stalled += 1;
    }
    raw + *stalled as u64 * stall_ns
}

enum Coordination {
    MasterWorker(CoordinatorState),
    Bitvector {
        workers: Vec<BitvectorWorker>,
        fallback: CoordinatorState,
    },
}

enum Released {
    Shared(Vec<Arc<Response>>),
    PerRank(Vec<Vec<Arc<Response>>>),
}

impl Released {
    fn get(&self, rank: usize) -> &[Arc<Response>] {
        match self {
            Released::Shared(list) => list,
            Released::PerRank(lists) => &lists[rank],
        }
    }

    fn is_empty(&self) -> bool {
        match self {
            Released::Shared(list) => list.is_empty(),
            Released::PerRank(lists) => lists.iter().all(Vec::is_empty),
        }
    }
}

struct CycleResult {
    released: Released,
    cost_s: f64,
    path: Option<CoordPath>,
}

fn same_batches(a: &[FusionBatch], b: &[FusionBatch]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            x.total_bytes == y.total_bytes
                && x.group_ids == y.group_ids
                && x.responses.len() == y.responses.len()
                && x.responses
                    .iter()
                    .zip(&y.responses)
                    .all(|(r, s)| Arc::ptr_eq(r, s) || r.key == s.key)
        })
}

struct Engine<'a> {
    config: &'a SimConfig,
    workload: &'a WorkloadGraph,
    index: HashMap<&'a str, u32>,
    nominal: Vec<(usize, u64)>,
    coordination: Coordination,
    fusers: Vec<Fuser>,
    idle_cost_s: f64,
    now: u64,
    steps: Vec<StepMetrics>,
    events: Vec<Event>,
    sequences: Vec<Vec<Vec<u32>>>,
}

impl<'a> Engine<'a> {
    fn new(config: &'a SimConfig, workload: &'a WorkloadGraph) -> Self {
        let p = config.world_size;
        let header = config.calibration.record_header_bytes;
        let (coordination, idle_cost_s) = match config.coordinator {
            CoordinatorKind::MasterWorker => (
                Coordination::MasterWorker(CoordinatorState::with_record_header(p, header)),
                coordination_cost(
                    &config.cost,
                    &config.calibration,
                    CoordinationLoad::MasterWorker(RoundTraffic::default()),
                    p,
                ),
            ),
            CoordinatorKind::Bitvector => {
                let workers: Vec<_> = (0..p)
                    .map(|r| BitvectorWorker::new(r, config.cache_capacity))
                    .collect();
                let bytes = workers[0].cache().empty_vector().byte_len();
                (
                    Coordination::Bitvector {
                        workers,
                        fallback: CoordinatorState::with_record_header(p, header),
                    },
                    collective_cost(&config.cost, bytes, p),
                )
            }
        };
        Engine {
            config,
            workload,
            index: workload
                .tensors()
                .iter()
                .enumerate()
                .map(|(i, t)| (t.name(), i as u32))
                .collect(),
            nominal: workload.nominal_readiness(),
            coordination,
            fusers: (0..p).map(|_| Fuser::new(config.fusion.clone())).collect(),
            idle_cost_s,
            now: 0,
            steps: Vec::with_capacity(config.steps),
            events: Vec::new(),
            sequences: Vec::new(),
        }
    }

    fn emit_all(&mut self, at: u64, step: usize, kind: EventKind, detail: impl Fn() -> String) {
        if !self.config.record_events {
            return;
        }
        let detail = detail();
        for w in 0..self.config.world_size {
            self.events.push(Event {
                timestamp_ns: at,
                step: step as u32,
                worker: w as u32,
                event: kind,
                detail: detail.clone(),
            });
        }
    }

    fn coordinate(&mut self, new: Vec<Vec<Request>>) -> Result<CycleResult, SimError> {
        let p = self.config.world_size;
        match &mut self.coordination {
            Coordination::MasterWorker(coord) => {
                coord.gather(&new)?;
                let out = coord.form_and_order()?;
                let traffic = coord.take_round_traffic();
                let cost_s = coordination_cost(
                    &self.config.cost,
                    &self.config.calibration,
                    CoordinationLoad::MasterWorker(traffic),
                    p,
                );
                Ok(CycleResult {
                    released: Released::Shared(out),
                    cost_s,
                    path: None,
                })
            }
            Coordination::Bitvector { workers, fallback } => {
                for (worker, list) in workers.iter_mut().zip(new) {
                    for req in list {
                        worker.submit(req);
                    }
                }
                let out = coordinate_cycle(workers, fallback)?;
                let mut cost_s = coordination_cost(
                    &self.config.cost,
                    &self.config.calibration,
                    CoordinationLoad::Bitvector {
                        vector_bytes: out.vector_bytes,
                    },
                    p,
                );
                if let Some(traffic) = out.fallback_traffic {
                    cost_s += coordination_cost(
                        &self.config.cost,
                        &self.config.calibration,
                        CoordinationLoad::MasterWorker(traffic),
                        p,
                    );
                }
                Ok(CycleResult {
                    released: Released::PerRank(out.per_rank),
                    cost_s,
                    path: Some(out.path),
                })
            }
        }
    }

    fn draw_arrivals(&mut self, step: usize, step_start: u64) -> Vec<Vec<(u64, u32)>> {
        let jitter = self.workload.jitter();
        let mut all = Vec::with_capacity(self.config.world_size);
        for w in 0..self.config.world_size {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(self.config.seed, step, w));
            let mut arrivals: Vec<(u64, u32)> = self
                .nominal
                .iter()
                .map(|&(idx, t)| {
                    let at = (t as i64 + jitter.sample(&mut rng)).max(0) as u64;
                    (at, idx as u32)
                })
                .collect();
            arrivals.sort_unstable();
            if self.config.record_events {
                for &(at, idx) in &arrivals {
                    self.events.push(Event {
                        timestamp_ns: step_start + at,
                        step: step as u32,
                        worker: w as u32,
                        event: EventKind::TensorReady,
                        detail: self.workload.tensors()[idx as usize].name().to_string(),
                    });
                }
            }
            all.push(arrivals);
        }
        all
    }

    fn step(&mut self, step: usize) -> Result<(), SimError> {
        let config = self.config;
        let p = config.world_size;
        let n_tensors = self.workload.len();
        let ct = config.cycle_time_ns;
        let step_start = self.now;
        let arrivals = self.draw_arrivals(step, step_start);
        let compute_end: Vec<u64> = arrivals
            .iter()
            .map(|a| a.last().map_or(0, |x| x.0))
            .collect();

        let mut cursor = vec![0usize; p];
        let stall_ns = collective_stall_ns(config.stall_sigma_ns, p);
        // Step-relative start times of executed batches, and per worker how
        // many of them stalled its backprop so far.
        let mut batch_starts: Vec<u64> = Vec::new();
        let mut stalled = vec![0usize; p];
        let mut done = vec![false; n_tensors];
        let mut done_count = 0usize;
        let mut sequences: Vec<Vec<u32>> = if config.record_sequences {
            vec![Vec::with_capacity(n_tensors); p]
        } else {
            Vec::new()
        };
        let mut stats = StepMetrics {
            step,
            t_exec_ns: 0,
            t_comm_ns: 0.0,
            t_comp_ns: 0.0,
            t_misc_ns: config.t_misc_ns,
            cycles: 0,
            fast_cycles: 0,
            fallback_cycles: 0,
            batches: 0,
            min_batch_bytes: u64::MAX,
            coordination_ns: 0,
        };

        let mut cycle_start = step_start + ct;
        let mut now;
        loop {
            stats.cycles += 1;
            if stats.cycles > config.cycle_limit {
                return Err(SimError::DeadlockDetected {
                    step,
                    cycles: stats.cycles - 1,
                    pending: n_tensors - done_count,
                });
            }
            let horizon = cycle_start - step_start;
            let tensors = self.workload.tensors();
            let new: Vec<Vec<Request>> = arrivals
                .iter()
                .zip(cursor.iter_mut())
                .zip(stalled.iter_mut())
                .enumerate()
                .map(|(rank, ((list, c), k))| {
                    let mut reqs = Vec::new();
                    while *c < list.len()
                        && stalled_arrival(list[*c].0, stall_ns, &batch_starts, k) <= horizon
                    {
                        let idx = list[*c].1 as usize;
                        reqs.push(Request::new(
                            rank,
                            tensors[idx].clone(),
                            CollectiveKind::Allreduce,
                        ));
                        *c += 1;
                    }
                    reqs
                })
                .collect();

            let result = self.coordinate(new)?;
            let cost_ns = secs_to_ns(result.cost_s);
            stats.coordination_ns += cost_ns;
            let cycle_no = stats.cycles;
            self.emit_all(cycle_start, step, EventKind::CycleMark, || {
                format!("cycle={cycle_no}")
            });
            match result.path {
                Some(CoordPath::Fast) => {
                    stats.fast_cycles += 1;
                    self.emit_all(cycle_start, step, EventKind::CoordFast, || {
                        format!("cost_ns={cost_ns}")
                    });
                }
                Some(CoordPath::Fallback) => {
                    stats.fallback_cycles += 1;
                    self.emit_all(cycle_start, step, EventKind::CoordFallback, || {
                        format!("cost_ns={cost_ns}")
                    });
                }
                None => {}
            }
            now = cycle_start + cost_ns;

            let batches = self.fusers[0].push(result.released.get(0))?;
            for rank in 0..p {
                let mine;
                let own = if rank == 0 {
                    &batches
                } else {
                    mine = self.fusers[rank].push(result.released.get(rank))?;
                    &mine
                };
                if let Some(seq) = sequences.get_mut(rank) {
                    seq.extend(
                        own.iter()
                            .flat_map(|b| b.tensor_names())
                            .map(|n| self.index[n]),
                    );
                }
                if !same_batches(own, &batches) {
                    return Err(SimError::Divergence { step, worker: rank });
                }
            }

            for batch in &batches {
                let start = now;
                if stall_ns > 0 {
                    batch_starts.push(start - step_start);
                }
                now += secs_to_ns(collective_cost(&config.cost, batch.total_bytes, p));
                stats.batches += 1;
                stats.min_batch_bytes = stats.min_batch_bytes.min(batch.total_bytes);
                for name in batch.tensor_names() {
                    let idx = self.index[name];
                    if std::mem::replace(&mut done[idx as usize], true) {
                        return Err(SimError::DuplicateExecution {
                            step,
                            name: name.to_string(),
                        });
                    }
                    done_count += 1;
                    if config.check_payloads {
                        self.check_payload(step, idx as usize)?;
                    }
                }
                self.emit_all(start, step, EventKind::BatchExec, || {
                    format!(
                        "tensors={} bytes={} groups={:?}",
                        batch.responses.len(),
                        batch.total_bytes,
                        batch.group_ids
                    )
                });
            }

            if done_count == n_tensors {
                break;
            }

            let mut next = (cycle_start + ct).max(now);
            if result.released.is_empty() && batches.is_empty() {
                // Nothing can change until the next gradient arrives.
                let next_arrival = arrivals
                    .iter()
                    .zip(&cursor)
                    .zip(stalled.iter_mut())
                    .filter_map(|((list, &c), k)| {
                        list.get(c)
                            .map(|a| step_start + stalled_arrival(a.0, stall_ns, &batch_starts, k))
                    })
                    .min();
                let Some(arrival) = next_arrival else {
                    return Err(SimError::DeadlockDetected {
                        step,
                        cycles: stats.cycles,
                        pending: n_tensors - done_count,
                    });
                };
                if arrival > next {
                    let idle_ns = secs_to_ns(self.idle_cost_s);
                    let period = ct.max(idle_ns);
                    let skipped = (arrival - next).div_ceil(period);
                    if stats.cycles + skipped >= config.cycle_limit {
                        return Err(SimError::DeadlockDetected {
                            step,
                            cycles: config.cycle_limit,
                            pending: n_tensors - done_count,
                        });
                    }
                    for i in 0..skipped {
                        let at = next + i * period;
                        let cycle_no = stats.cycles + 1 + i;
                        self.emit_all(at, step, EventKind::CycleMark, || {
                            format!("cycle={cycle_no}")
                        });
                        if config.coordinator == CoordinatorKind::Bitvector {
                            self.emit_all(at, step, EventKind::CoordFast, || {
                                format!("cost_ns={idle_ns}")
                            });
                        }
                    }
                    stats.cycles += skipped;
                    stats.coordination_ns += skipped * idle_ns;
                    if config.coordinator == CoordinatorKind::Bitvector {
                        stats.fast_cycles += skipped;
                    }
                    next += skipped * period;
                }
            }
            cycle_start = next;
        }

        let span = now - step_start;
        // Stalls are time blocked on collectives, so they land in t_comm.
        let t_comp = compute_end.iter().map(|&c| c as f64).sum::<f64>() / p as f64;
        stats.t_exec_ns = span + config.t_misc_ns;
        stats.t_comp_ns = t_comp;
        stats.t_comm_ns = span as f64 - t_comp;
        if stats.batches == 0 {
            stats.min_batch_bytes = 0;
        }
        self.emit_all(now, step, EventKind::StepEnd, || {
            format!("t_exec_ns={}", span + config.t_misc_ns)
        });
        if config.record_sequences {
            self.sequences.push(sequences);
        }
        debug_assert!(self.fusers.iter().all(|f| f.deferred().is_empty()));
        self.steps.push(stats);
        self.now = now + config.t_misc_ns;
        Ok(())
    }

    fn check_payload(&self, step: usize, idx: usize) -> Result<(), SimError> {
        let p = self.config.world_size;
        let len = self.workload.tensors()[idx].num_elements().min(PAYLOAD_LEN) as usize;
        let payloads: Vec<Vec<i64>> = (0..p)
            .map(|w| payload(self.config.seed, step, w, idx, len))
            .collect();
        let reduced = reduce_oracle(&payloads)?;
        let mut expected = vec![0i64; len];
        for w in 0..p {
            for (e, v) in expected
                .iter_mut()
                .zip(payload(self.config.seed, step, w, idx, len))
            {
                *e += v;
            }
        }
        if reduced != expected {
            return Err(SimError::PayloadMismatch {
                step,
                name: self.workload.tensors()[idx].name().to_string(),
            });
        }
        Ok(())
    }

    fn shutdown(&mut self) -> Result<(), SimError> {
        if let Coordination::Bitvector { workers, fallback } = &mut self.coordination {
            for w in workers.iter_mut() {
                w.begin_shutdown();
            }
            let out = coordinate_cycle(workers, fallback)?;
            debug_assert!(out.shutdown);
        }
        Ok(())
    }

    fn finish(mut self) -> Result<SimMetrics, SimError> {
        self.shutdown()?;
        let counter = match &self.coordination {
            Coordination::MasterWorker(c) => c.counter(),
            Coordination::Bitvector { fallback, .. } => fallback.counter(),
        };
        let mut metrics = SimMetrics {
            world_size: self.config.world_size,
            coordinator: self.config.coordinator,
            grouped: self.config.fusion.group_spec().is_some(),
            warmup_steps: self.config.warmup_steps,
            steps: self.steps,
            throughput_per_s: 0.0,
            mean_t_exec_ns: 0.0,
            mean_t_comm_ns: 0.0,
            mean_t_comp_ns: 0.0,
            master_worker_messages: counter.into(),
            events: self.events,
            sequences: self.sequences,
        };
        let measured = metrics.measured_steps();
        let n = measured.len() as f64;
        let mean_exec = measured.iter().map(|s| s.t_exec_ns as f64).sum::<f64>() / n;
        let mean_comm = measured.iter().map(|s| s.t_comm_ns).sum::<f64>() / n;
        let mean_comp = measured.iter().map(|s| s.t_comp_ns).sum::<f64>() / n;
        metrics.mean_t_exec_ns = mean_exec;
        metrics.mean_t_comm_ns = mean_comm;
        metrics.mean_t_comp_ns = mean_comp;
        metrics.throughput_per_s = metrics.world_size as f64 / (mean_exec * 1e-9);
        // Stable sort keeps per-timestamp emission order.
        metrics.events.sort_by_key(|e| e.timestamp_ns);
        Ok(metrics)
    }
}

/// Runs a full simulation.
pub fn run(config: &SimConfig, workload: &WorkloadGraph) -> Result<SimMetrics, SimError> {
    config.validate(workload)?;
    let mut engine = Engine::new(config, workload);
    for step in 0..config.steps {
        engine.step(step)?;
    }
    engine.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::equal_byte_groups;
    use crate::protocol::TensorMeta;
    use crate::workload::JitterSpec;

    fn small_workload(n: usize, jitter: JitterSpec) -> WorkloadGraph {
        let tensors = (0..n)
            .map(|i| TensorMeta::new(format!("t{i}"), vec![1000 + i as u64 * 10], 2).unwrap())
            .collect();
        WorkloadGraph::new(tensors, vec![200_000; n], jitter).unwrap()
    }

    #[test]
    fn single_worker_runs() {
        let w = small_workload(8, JitterSpec::None);
        for coordinator in [CoordinatorKind::MasterWorker, CoordinatorKind::Bitvector] {
            let m = run(
                &SimConfig {
                    coordinator,
                    steps: 3,
                    ..Default::default()
                },
                &w,
            )
            .unwrap();
            assert_eq!(m.steps.len(), 3);
            assert!(m.throughput_per_s > 0.0);
            for s in &m.steps {
                let closure = s.t_comm_ns + s.t_comp_ns + s.t_misc_ns as f64;
                assert!((s.t_exec_ns as f64 - closure).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn zero_cost_network_matches_critical_path() {
        // 8 tensors × 250 µs = 2 ms, a whole number of 1 ms cycles.
        let tensors = (0..8)
            .map(|i| TensorMeta::new(format!("t{i}"), vec![64], 2).unwrap())
            .collect();
        let w = WorkloadGraph::new(tensors, vec![250_000; 8], JitterSpec::None).unwrap();
        let m = run(
            &SimConfig {
                world_size: 64,
                steps: 2,
                cost: CostModel::zero(),
                stall_sigma_ns: 0.0,
                calibration: CoordinationCalibration {
                    seconds_per_record: 0.0,
                    ..Default::default()
                },
                ..Default::default()
            },
            &w,
        )
        .unwrap();
        for s in &m.steps {
            assert_eq!(s.t_exec_ns, w.critical_path_ns());
        }
    }

    #[test]
    fn bitvector_falls_back_only_in_first_step() {
        let w = small_workload(
            20,
            JitterSpec::Uniform {
                half_width_ns: 300_000,
            },
        );
        let m = run(
            &SimConfig {
                world_size: 8,
                steps: 5,
                ..Default::default()
            },
            &w,
        )
        .unwrap();
        assert_eq!(m.fallback_steps(), vec![0]);
    }

    #[test]
    fn grouped_run_batches_whole_groups() {
        let w = small_workload(
            30,
            JitterSpec::Uniform {
                half_width_ns: 300_000,
            },
        );
        let spec = equal_byte_groups(&w.backprop_tensors(), 5).unwrap();
        let m = run(
            &SimConfig {
                world_size: 4,
                steps: 3,
                fusion: FusionPolicy::grouped(spec),
                check_payloads: true,
                ..Default::default()
            },
            &w,
        )
        .unwrap();
        for s in &m.steps {
            assert!(s.batches <= 5, "{s:?}");
        }
    }

    #[test]
    fn config_errors() {
        let w = small_workload(4, JitterSpec::None);
        for cfg in [
            SimConfig {
                world_size: 0,
                ..Default::default()
            },
            SimConfig {
                steps: 0,
                ..Default::default()
            },
            SimConfig {
                cycle_time_ns: 0,
                ..Default::default()
            },
            SimConfig {
                cache_capacity: 2,
                ..Default::default()
            },
        ] {
            assert!(matches!(run(&cfg, &w), Err(SimError::Config(_))));
        }
    }

    #[test]
    fn cycle_limit_reports_deadlock() {
        let w = small_workload(4, JitterSpec::None);
        let err = run(
            &SimConfig {
                cycle_limit: 1,
                cycle_time_ns: 10_000,
                ..Default::default()
            },
            &w,
        )
        .unwrap_err();
        assert!(matches!(err, SimError::DeadlockDetected { step: 0, .. }));
    }

    #[test]
    fn payload_streams_are_deterministic() {
        assert_eq!(payload(1, 2, 3, 4, 4), payload(1, 2, 3, 4, 4));
        assert_ne!(payload(1, 2, 3, 4, 4), payload(1, 2, 4, 4, 4));
        assert!(payload(9, 0, 0, 0, 16)
            .iter()
            .all(|v| (-1000..=1000).contains(v)));
    }
}
