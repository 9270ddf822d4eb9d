//! Approximate worst-case bands over an eta grid, printed as CSV.

use klsens::expansion::{analyze_exact, sweep, Order, ReportSense};
use klsens::model::FiniteDistribution;
use klsens::symmetrize::{CostSpec, HorizonSpec, PathSum, RandomizedHorizonConfig};

fn main() -> klsens::Result<()> {
    let order = match std::env::args().nth(1).as_deref() {
        Some("1") => Order::First,
        _ => Order::Second,
    };
    let dist = FiniteDistribution::new(vec![0.5, 1.0, 3.0], vec![0.5, 0.4, 0.1])?;
    let cost = CostSpec::new(PathSum, HorizonSpec::Fixed(4));
    let report = analyze_exact(&dist, &cost, &RandomizedHorizonConfig::default(), ReportSense::Both)?;
    let grid = [0.0, 1e-4, 5e-4, 1e-3, 2e-3, 5e-3, 1e-2, 2e-2];
    print!("{}", sweep(&report, &grid, order)?.to_csv());
    Ok(())
}
