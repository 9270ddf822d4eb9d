//! Waiting time of the 100th customer in M/M/s queues and its first-order
//! sensitivity to the service-time distribution.

use klsens::nestedmc::NestedDesign;
use klsens::queue::{benchmark_table, table_csv, QueueConfig};

fn main() -> klsens::Result<()> {
    let servers: Vec<usize> = std::env::args()
        .skip(1)
        .map(|a| a.parse().expect("server count"))
        .collect();
    let servers = if servers.is_empty() {
        vec![20, 30, 40, 50, 60]
    } else {
        servers
    };
    let configs: Vec<QueueConfig> = servers.iter().map(|&s| QueueConfig::mms(s, 100)).collect();
    let rows = benchmark_table(&configs, 10_000, &NestedDesign::default(), 2024)?;
    print!("{}", table_csv(&rows));
    Ok(())
}
