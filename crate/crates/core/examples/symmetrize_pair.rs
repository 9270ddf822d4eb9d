//! Symmetrized objects g, G and nu of a two-period cost on a small support,
//! alongside the full report they feed.

use klsens::expansion::{analyze_exact, ReportSense};
use klsens::model::FiniteDistribution;
use klsens::symmetrize::{g_exact, pair_nu_exact, CostSpec, HorizonSpec, RandomizedHorizonConfig};

fn main() -> klsens::Result<()> {
    let dist = FiniteDistribution::new(vec![-1.0, 0.5, 2.0], vec![0.3, 0.5, 0.2])?;
    // product of the two inputs plus a square of the first
    let cost = CostSpec::new(|p: &[f64], _: &[f64]| p[0] * p[1] + p[0].powi(2), HorizonSpec::Fixed(2));
    let g = g_exact(&dist, &cost)?;
    let pair = pair_nu_exact(&dist, &cost)?;
    for (i, x) in dist.atoms().iter().enumerate() {
        let row: Vec<String> = pair.pair[i].iter().map(|v| format!("{v:8.4}")).collect();
        println!("x {x:5.2}  g {:8.4}  G {}", g[i], row.join(" "));
    }
    println!("nu {:.6}", pair.nu);
    let report = analyze_exact(&dist, &cost, &RandomizedHorizonConfig::default(), ReportSense::Max)?;
    println!("{}", report.to_json());
    Ok(())
}
