//! Event timeline of a small grouped run, printed as JSON lines.

use gradsync::fusion::equal_byte_groups;
use gradsync::fusion::FusionPolicy;
use gradsync::sim::timeline::{write_timeline, TimelineFormat};
use gradsync::sim::{run, SimConfig};
use gradsync::workload::{gen_workload, GenParams, Profile};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let workload = gen_workload(&GenParams {
        profile: Profile::Uniform,
        total_params: 4_000_000,
        tensor_count: 12,
        compute_ns: 12_000_000,
        ..Default::default()
    })?;
    let groups = equal_byte_groups(&workload.backprop_tensors(), 3)?;
    let config = SimConfig {
        world_size: 2,
        steps: 2,
        warmup_steps: 0,
        fusion: FusionPolicy::grouped(groups),
        record_events: true,
        ..Default::default()
    };
    let m = run(&config, &workload)?;
    write_timeline(
        &m.events,
        TimelineFormat::JsonLines,
        std::io::stdout().lock(),
    )?;
    Ok(())
}
