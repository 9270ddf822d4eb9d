//! Mean of a standard normal input: zeta1 should be sqrt(2) times the sd,
//! checked here on a fine discretization.

use klsens::expansion::{analyze_exact, ReportSense};
use klsens::model::FiniteDistribution;
use klsens::symmetrize::{CostSpec, HorizonSpec, PathSum, RandomizedHorizonConfig};

fn main() -> klsens::Result<()> {
    let sd = 2.0;
    let dist = FiniteDistribution::discretized_normal(0.0, sd, 4001, 8.0)?;
    let cost = CostSpec::new(PathSum, HorizonSpec::Single);
    let report = analyze_exact(&dist, &cost, &RandomizedHorizonConfig::default(), ReportSense::Both)?;
    println!("zeta1 {:.6} (sqrt(2) sd = {:.6})", report.zeta1, 2f64.sqrt() * sd);
    println!("zeta2 {:.3e}", report.zeta2.unwrap_or(f64::NAN));
    Ok(())
}
