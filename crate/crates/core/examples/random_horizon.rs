//! Exceedance of a level before a geometric horizon. The exact truncated
//! symmetrization is checked against the randomized-horizon estimator.

use klsens::expansion::{analyze_exact, ReportSense};
use klsens::model::{stream_id, FiniteDistribution, StochasticModel};
use klsens::symmetrize::{
    g_tilde, g_tilde_exact, CostSpec, HorizonSpec, MaxExceed, OmegaPmf, RandomHorizon, RandomizedHorizonConfig, TauLaw,
};

fn main() -> klsens::Result<()> {
    let dist = FiniteDistribution::new(vec![0.0, 1.0, 2.0], vec![0.5, 0.3, 0.2])?;
    let law = TauLaw::Geometric { success: 0.4 };
    let cost = CostSpec::new(
        MaxExceed { level: 1.5 },
        HorizonSpec::Random(RandomHorizon::Independent(law)),
    )
    .bounded_by(1.0);
    let config = RandomizedHorizonConfig {
        pmf: OmegaPmf::Geometric { success: 0.3 },
        ..Default::default()
    };

    let exact = g_tilde_exact(&dist, &cost, &config)?;
    println!(
        "t_cut {}  tail bound {:.2e}  mean {:.6}",
        exact.t_cut, exact.tail_bound, exact.mean
    );
    let model = StochasticModel::from(dist.clone());
    for (i, &x) in dist.atoms().iter().enumerate() {
        let mc = g_tilde(&model, &cost, &config, x, 200_000, 3, stream_id(1, i as u64))?;
        println!(
            "x {x}  exact {:.5}  randomized {:.5} +- {:.5}",
            exact.g[i],
            mc.mean,
            2.0 * mc.se
        );
    }
    let report = analyze_exact(&dist, &cost, &config, ReportSense::Both)?;
    println!(
        "zeta1 {:.6}  zeta2 {:.6}",
        report.zeta1,
        report.zeta2.unwrap_or(f64::NAN)
    );
    Ok(())
}
