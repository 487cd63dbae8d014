//! Alpha-beta collective costs and what coordination costs per cycle.
//!
//! Prints ring versus double-binary-tree allreduce time across world sizes,
//! then the per-cycle coordination cost of each protocol as the number of
//! pending requests grows.

use gradsync::backend::{
    collective_cost, coordination_cost, Algorithm, CoordinationCalibration, CoordinationLoad,
    CostModel, DEFAULT_ALPHA, DEFAULT_BETA,
};
use gradsync::bitvector::{words_for_capacity, DEFAULT_CACHE_CAPACITY};
use gradsync::master_worker::RoundTraffic;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ring = CostModel::new(DEFAULT_ALPHA, DEFAULT_BETA, Algorithm::Ring)?;
    let tree = CostModel::new(DEFAULT_ALPHA, DEFAULT_BETA, Algorithm::DoubleBinaryTree)?;

    println!(
        "{:>6} {:>14} {:>14} {:>14} {:>14}",
        "P", "ring 4KiB us", "tree 4KiB us", "ring 64MiB ms", "tree 64MiB ms"
    );
    for p in [2usize, 8, 64, 512, 4096] {
        println!(
            "{p:>6} {:>14.2} {:>14.2} {:>14.3} {:>14.3}",
            collective_cost(&ring, 4096, p) * 1e6,
            collective_cost(&tree, 4096, p) * 1e6,
            collective_cost(&ring, 64 << 20, p) * 1e3,
            collective_cost(&tree, 64 << 20, p) * 1e3,
        );
    }

    let cal = CoordinationCalibration::default();
    let p = 1024;
    let vector_bytes = words_for_capacity(DEFAULT_CACHE_CAPACITY) as u64 * 8;
    println!("\ncoordination per cycle at P={p} (bitvector moves {vector_bytes} bytes)");
    for pending in [0u64, 16, 256, 4000] {
        // Every rank sends one record per pending tensor; names are 8 bytes.
        let records = pending * p as u64;
        let record_bytes = cal.record_header_bytes + 8;
        let traffic = RoundTraffic {
            gathered_records: records,
            gathered_bytes: records * record_bytes,
            broadcast_bytes: pending * record_bytes,
        };
        let mw = coordination_cost(&tree, &cal, CoordinationLoad::MasterWorker(traffic), p);
        let bv = coordination_cost(&tree, &cal, CoordinationLoad::Bitvector { vector_bytes }, p);
        println!(
            "  {pending:>5} pending: master-worker {:>12.1} us, bitvector {:>6.1} us",
            mw * 1e6,
            bv * 1e6
        );
    }
    Ok(())
}
