//! One simulated training run per coordinator on the default workload.
//!
//! Usage: `cargo run --release --example simulate_bitvector -- [workers]`

use gradsync::sim::{run, CoordinatorKind, SimConfig};
use gradsync::workload::{gen_workload, GenParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let workers: usize = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(64);
    let workload = gen_workload(&GenParams::default())?;
    println!(
        "{} tensors, {:.1} MB of gradients, {:.1} ms backprop",
        workload.len(),
        workload.total_bytes() as f64 / 1e6,
        workload.critical_path_ns() as f64 / 1e6
    );

    for coordinator in [CoordinatorKind::MasterWorker, CoordinatorKind::Bitvector] {
        let config = SimConfig {
            world_size: workers,
            steps: 5,
            coordinator,
            ..Default::default()
        };
        let m = run(&config, &workload)?;
        let cycles: u64 = m.measured_steps().iter().map(|s| s.cycles).sum();
        println!(
            "{coordinator:?} at P={workers}: {:.1} inputs/s, t_exec {:.1} ms (comm {:.1}, comp {:.1}), {cycles} cycles, fallback steps {:?}",
            m.throughput_per_s,
            m.mean_t_exec_ns / 1e6,
            m.mean_t_comm_ns / 1e6,
            m.mean_t_comp_ns / 1e6,
            m.fallback_steps(),
        );
    }
    Ok(())
}
