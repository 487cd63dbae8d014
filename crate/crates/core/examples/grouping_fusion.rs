//! Grouped versus ungrouped fusion on a jittered arrival stream.
//!
//! Ungrouped fusion packs whatever is ready each cycle. Grouped fusion holds
//! responses back until every member of their group has arrived, so batches
//! never drop below the smallest group.

use std::sync::Arc;
use std::time::Duration;

use gradsync::fusion::{cycle_scope, equal_byte_groups, Fuser, FusionPolicy};
use gradsync::protocol::{merge_requests, CollectiveKind, MergeOutcome, Request};
use gradsync::workload::{gen_workload, GenParams, Profile};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let workload = gen_workload(&GenParams {
        profile: Profile::Uniform,
        total_params: 1_000_000,
        tensor_count: 24,
        compute_ns: 24_000_000,
        ..Default::default()
    })?;
    let groups = equal_byte_groups(&workload.backprop_tensors(), 4)?;

    let mut arrivals = Vec::new();
    for (idx, ready_ns) in workload.nominal_readiness() {
        let req = Request::new(
            0,
            workload.tensors()[idx].clone(),
            CollectiveKind::Allreduce,
        );
        let MergeOutcome::Complete(resp) = merge_requests(&[req], 1)? else {
            unreachable!("one rank is always complete");
        };
        arrivals.push((Duration::from_nanos(ready_ns), Arc::new(resp)));
    }
    let cycles = cycle_scope(&arrivals, Duration::from_millis(2));

    for (label, policy) in [
        ("ungrouped", FusionPolicy::default()),
        ("grouped", FusionPolicy::grouped(groups.clone())),
    ] {
        let mut fuser = Fuser::new(policy);
        let mut sizes = Vec::new();
        for (_, ready) in &cycles {
            for batch in fuser.push(ready)? {
                sizes.push(batch.total_bytes);
            }
        }
        let min = sizes.iter().copied().min().unwrap_or(0);
        println!("{label:>9}: {} batches, smallest {min} bytes", sizes.len());
    }
    let smallest_group = groups
        .group_bytes(workload.tensors().iter().map(|t| t.as_ref()))
        .values()
        .copied()
        .min()
        .unwrap_or(0);
    println!("smallest group: {smallest_group} bytes");
    Ok(())
}
