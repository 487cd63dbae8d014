//! Scaling efficiency of the three strategies, written as CSV to stdout.
//!
//! Usage: `cargo run --release --example scaling_sweep -- [max_workers]`

use gradsync::sim::sweep::{
    default_groups, efficiency_sweep, Strategy, CSV_HEADER, DEFAULT_GROUP_COUNT,
};
use gradsync::sim::SimConfig;
use gradsync::workload::{gen_workload, GenParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let max: usize = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(256);
    let sizes: Vec<usize> = std::iter::successors(Some(2usize), |p| Some(p * 2))
        .take_while(|&p| p <= max)
        .collect();
    let workload = gen_workload(&GenParams::default())?;
    let groups = default_groups(&workload, DEFAULT_GROUP_COUNT)?;
    let base = SimConfig {
        steps: 4,
        ..Default::default()
    };
    let rows = efficiency_sweep(&base, &workload, &sizes, &Strategy::ALL, &groups)?;
    println!("{CSV_HEADER}");
    for row in &rows {
        println!("{}", row.csv_line());
    }
    Ok(())
}
