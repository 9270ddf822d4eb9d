//! Worst-case likelihood ratio of a two-period cost found by iterating the
//! fixed-point map, with alpha calibrated to each KL budget.

use klsens::fixedpoint::{FixedPointProblem, SolveOptions};
use klsens::model::FiniteDistribution;
use klsens::symmetrize::{CostSpec, HorizonSpec, MaxExceed};

fn main() -> klsens::Result<()> {
    let dist = FiniteDistribution::new(vec![0.0, 1.0, 2.0, 3.0], vec![0.4, 0.3, 0.2, 0.1])?;
    let cost = CostSpec::new(MaxExceed { level: 1.5 }, HorizonSpec::Fixed(3));
    let problem = FixedPointProblem::new(&dist, &cost)?;
    let quad = problem.quadratic_terms()?;
    println!("E0[h] {:.6}", problem.table().mean());
    for eta in [1e-4, 1e-3, 1e-2] {
        let sol = problem.calibrate(eta, 1e-12, SolveOptions::default())?;
        let approx = quad.objective_approx(sol.beta());
        println!(
            "eta {eta:.0e}  objective {:.6}  quadratic {approx:.6}  alpha {:.3}  kl {:.3e}  iters {}  rate {:.3}",
            sol.objective, sol.alpha, sol.kl, sol.iterations, sol.contraction_factor
        );
        let l: Vec<String> = sol.l_star.weights.iter().map(|w| format!("{w:.4}")).collect();
        println!("  L* = [{}]", l.join(", "));
    }
    Ok(())
}
