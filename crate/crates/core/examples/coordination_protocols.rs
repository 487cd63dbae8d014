//! Master-worker versus bitvector coordination on the same request stream.
//!
//! Four ranks submit the same three tensors in different orders. The
//! master-worker coordinator gathers every request and answers in
//! first-arrival order. The bitvector coordinator pays that round once,
//! then serves later steps with a single AND-reduction.

use std::sync::Arc;

use gradsync::bitvector::{coordinate_cycle, BitvectorWorker, DEFAULT_CACHE_CAPACITY};
use gradsync::master_worker::CoordinatorState;
use gradsync::protocol::{CollectiveKind, Request, TensorMeta};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let p = 4;
    let tensors: Vec<Arc<TensorMeta>> = ["conv1.w", "conv2.w", "fc.w"]
        .iter()
        .zip([4096u64, 16384, 1024])
        .map(|(name, n)| TensorMeta::new(*name, vec![n], 2).map(Arc::new))
        .collect::<Result<_, _>>()?;

    // Rank r sees the tensors rotated by r.
    let lists: Vec<Vec<Request>> = (0..p)
        .map(|r| {
            (0..tensors.len())
                .map(|i| {
                    Request::new(
                        r,
                        tensors[(i + r) % tensors.len()].clone(),
                        CollectiveKind::Allreduce,
                    )
                })
                .collect()
        })
        .collect();

    let mut mw = CoordinatorState::new(p);
    mw.gather(&lists)?;
    let responses = mw.form_and_order()?;
    let traffic = mw.take_round_traffic();
    println!("master-worker round:");
    for r in &responses {
        println!("  {:?} {} bytes", r.tensor_names, r.message_bytes);
    }
    println!(
        "  gathered {} records ({} bytes)",
        traffic.gathered_records, traffic.gathered_bytes
    );

    let mut workers: Vec<BitvectorWorker> = (0..p)
        .map(|r| BitvectorWorker::new(r, DEFAULT_CACHE_CAPACITY))
        .collect();
    let mut fallback = CoordinatorState::new(p);
    for step in 0..3 {
        for (w, list) in workers.iter_mut().zip(lists.iter().cloned()) {
            list.into_iter().for_each(|r| w.submit(r));
        }
        let out = coordinate_cycle(&mut workers, &mut fallback)?;
        let order: Vec<&str> = out.per_rank[0]
            .iter()
            .flat_map(|r| r.tensor_names.iter().map(String::as_str))
            .collect();
        println!(
            "bitvector step {step}: {:?} path, {} byte vector, order {order:?}",
            out.path, out.vector_bytes
        );
    }
    Ok(())
}
