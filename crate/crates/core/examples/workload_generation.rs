//! Generates a synthetic workload, saves it, and reads it back.

use gradsync::workload::{gen_workload, GenParams, JitterSpec, WorkloadGraph};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let graph = gen_workload(&GenParams {
        seed: 42,
        jitter: JitterSpec::Normal { sigma_ns: 100_000 },
        ..Default::default()
    })?;
    let sizes: Vec<u64> = graph.tensors().iter().map(|t| t.num_elements()).collect();
    println!(
        "{} tensors, {} params, smallest {}, largest {}",
        graph.len(),
        graph.total_params(),
        sizes.iter().min().unwrap(),
        sizes.iter().max().unwrap()
    );

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("workload.json");
    std::fs::write(&path, serde_json::to_string_pretty(&graph.to_file())?)?;
    let back = WorkloadGraph::load(&path)?;
    assert_eq!(back.total_params(), graph.total_params());
    println!("round-trip through {} ok", path.display());
    Ok(())
}
