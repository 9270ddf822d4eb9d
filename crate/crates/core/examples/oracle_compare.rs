//! Brute-force optimization over the KL ball against the fixed-point solution
//! and the first- and second-order expansions.

use klsens::exact1d::Sense;
use klsens::expansion::{analyze_exact, ReportSense};
use klsens::fixedpoint::{FixedPointProblem, SolveOptions};
use klsens::model::FiniteDistribution;
use klsens::oracle::{brute_force_with, OracleOptions};
use klsens::symmetrize::{CostSpec, HorizonSpec, RandomizedHorizonConfig, TableCost};

fn main() -> klsens::Result<()> {
    let dist = FiniteDistribution::new(vec![0.0, 1.0, 2.0], vec![0.5, 0.3, 0.2])?;
    let values = vec![0.0, 1.0, 3.0, 0.5, 2.0, -1.0, 4.0, 1.5, 0.0];
    let cost = CostSpec::new(TableCost::new(&dist, 2, values)?, HorizonSpec::Fixed(2));
    let report = analyze_exact(&dist, &cost, &RandomizedHorizonConfig::default(), ReportSense::Max)?;
    let (z1, z2) = report.signed(Sense::Max);
    let problem = FixedPointProblem::new(&dist, &cost)?;
    println!(
        "{:>8} {:>11} {:>11} {:>11} {:>11}",
        "eta", "oracle", "fixed pt", "1st order", "2nd order"
    );
    for eta in [1e-4, 1e-3, 5e-3, 1e-2] {
        let fp = problem.calibrate(eta, 1e-12, SolveOptions::default())?;
        let options = OracleOptions {
            seeds: vec![fp.l_star.clone()],
            ..OracleOptions::default()
        };
        let oracle = brute_force_with(&dist, &cost, eta, Sense::Max, &options)?;
        let first = report.benchmark_mean + z1 * eta.sqrt();
        let second = first + z2.unwrap_or(0.0) * eta;
        println!(
            "{eta:>8.0e} {:>11.7} {:>11.7} {first:>11.7} {second:>11.7}",
            oracle.optimum, fp.objective
        );
    }
    Ok(())
}
