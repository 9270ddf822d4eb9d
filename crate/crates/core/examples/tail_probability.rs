//! Tail probability of a Gaussian random walk. The conditional expectation is
//! available in closed form, so zeta1 is estimated both directly and by nested
//! simulation, then compared with the parametric mean-shift sensitivity.

use klsens::expansion::dominance_check;
use klsens::model::{sample_stream, StochasticModel};
use klsens::nestedmc::{direct_zeta1, sectioned_zeta1, CostSampler, NestedDesign};
use klsens::symmetrize::{CostSpec, HorizonSpec, SumTail};
use statrs::distribution::{ContinuousCDF, Normal};

fn main() -> klsens::Result<()> {
    let (t, sd, threshold) = (5usize, 2.0, 10.0);
    let model = StochasticModel::Normal { mean: 0.0, sd };
    let cost = CostSpec::new(SumTail { threshold }, HorizonSpec::Fixed(t));

    let rest = Normal::new(0.0, sd * ((t - 1) as f64).sqrt()).unwrap();
    let g: Vec<f64> = sample_stream(&model, 7, 0, 1_000_000)
        .into_iter()
        .map(|x| t as f64 * rest.sf(threshold - x))
        .collect();
    let (direct, ci) = direct_zeta1(&g, 20, 0.95)?;
    println!("closed-form g: zeta1 {direct:.5} ci {ci:?}");

    let design = NestedDesign {
        outer: 1000,
        inner: 50,
        sections: 20,
        confidence: 0.95,
    };
    let nested = sectioned_zeta1(&CostSampler::new(&model, &cost), &design, 7)?;
    println!(
        "nested:        zeta1 {:.5} ci ({:?}, {:?})",
        nested.point, nested.ci_low, nested.ci_high
    );

    // d/dmu P(S > y) over d sqrt(KL)/dmu for a mean shift of the input law
    let total = Normal::new(0.0, sd * (t as f64).sqrt()).unwrap();
    let deriv = t as f64 * statrs::distribution::Continuous::pdf(&total, threshold);
    let kl_rate = 1.0 / (sd * 2f64.sqrt());
    let dom = dominance_check(deriv, kl_rate, direct)?;
    println!("parametric {:.5}  dominated {}", dom.rescaled, dom.dominated);
    Ok(())
}
