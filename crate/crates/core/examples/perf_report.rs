//! Per-GPU and aggregate FLOP rates from the bundled timing table.

use std::path::Path;

use gradsync::perf::{aggregate, performance, LayerFile, TimingColumn, TimingTable};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let table = TimingTable::load(&fixtures.join("table1.json"))?;
    let layers = LayerFile::load(&fixtures.join("fitted_layers.json"))?;
    let ops = layers.total_ops()? as f64;

    for column in [TimingColumn::NoTensorCores, TimingColumn::TensorCores] {
        let r = performance(ops, &table.records(column))?;
        println!(
            "{column:?}: t_exec {:.1} ms, sustained {:.2} TFLOPS, peak {:.2} TFLOPS",
            r.t_exec_ms,
            r.sustained_tflops(),
            r.peak_tflops()
        );
    }

    let per_gpu = performance(ops, &table.records(TimingColumn::TensorCores))?;
    let agg = aggregate(&per_gpu, 27_600, 0.93)?;
    println!(
        "27600 GPUs at 93% efficiency: sustained {:.3} EFLOPS, peak {:.3} EFLOPS",
        agg.sustained_flops / 1e18,
        agg.peak_flops / 1e18
    );
    Ok(())
}
