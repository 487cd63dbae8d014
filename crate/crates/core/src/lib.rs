//! Gradient-reduction coordination for data-parallel training.
//!
//! Two coordination strategies decide, every cycle, which gradient
//! collectives all workers are ready to run and in which order:
//!
//! * [`master_worker`]: rank 0 gathers requests and broadcasts responses.
//! * [`bitvector`]: a per-worker response cache turns the round into one
//!   bitwise-AND allreduce once the cache is warm.
//!
//! [`fusion`] packs released responses into fused messages, optionally
//! gated on complete tensor groups. [`sim`] runs both strategies on a
//! deterministic discrete-event model of `P` workers and [`perf`] holds the
//! convolution performance accounting.

pub mod backend;
pub mod bitvector;
pub mod cli;
pub mod config;
pub mod fusion;
pub mod master_worker;
pub mod perf;
pub mod protocol;
pub mod sim;
pub mod workload;

pub use backend::{collective_cost, Algorithm, CoordinationCalibration, CostModel};
pub use bitvector::{BitvectorWorker, CoordPath, ResponseCache};
pub use fusion::{FusionPolicy, GroupSpec};
pub use master_worker::CoordinatorState;
pub use protocol::{CollectiveKind, Request, Response, TensorMeta};
pub use sim::sweep::{efficiency_sweep, Strategy, SweepRow};
pub use sim::{run, CoordinatorKind, SimConfig, SimError, SimMetrics};
pub use workload::{gen_workload, GenParams, JitterSpec, WorkloadGraph};
