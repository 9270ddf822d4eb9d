//! Same table as `mms_table` for G/G/s queues with gamma inter-arrival and
//! uniform service times.

use klsens::nestedmc::NestedDesign;
use klsens::queue::{benchmark_table, table_csv, QueueConfig};

fn main() -> klsens::Result<()> {
    let configs: Vec<QueueConfig> = [20, 30, 40, 50, 60]
        .iter()
        .map(|&s| QueueConfig::ggs_default(s, 100))
        .collect();
    let rows = benchmark_table(&configs, 10_000, &NestedDesign::default(), 2024)?;
    print!("{}", table_csv(&rows));
    Ok(())
}
