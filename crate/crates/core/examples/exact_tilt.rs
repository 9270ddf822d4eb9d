//! Worst-case mean of a single input over a KL ball, solved exactly by
//! exponential tilting and compared with the two-term expansion.

use klsens::exact1d::{expansion1d, solve_tilt, Sense};
use klsens::model::FiniteDistribution;

fn main() -> klsens::Result<()> {
    let dist = FiniteDistribution::new(vec![0.0, 1.0, 2.0, 5.0], vec![0.4, 0.3, 0.2, 0.1])?;
    let h = dist.map(|x| x * x);
    let (zeta1, zeta2) = expansion1d(&dist, &h)?;
    let mean = dist.expect(&h);
    println!("mean {mean:.6}  zeta1 {zeta1:.6}  zeta2 {zeta2:.6}");
    println!(
        "{:>8} {:>12} {:>12} {:>12} {:>12}",
        "eta", "exact max", "approx max", "exact min", "approx min"
    );
    for eta in [1e-4, 1e-3, 1e-2, 5e-2] {
        let hi = solve_tilt(&dist, &h, eta, Sense::Max)?.optimum;
        let lo = solve_tilt(&dist, &h, eta, Sense::Min)?.optimum;
        let up = mean + zeta1 * eta.sqrt() + zeta2 * eta;
        let down = mean - zeta1 * eta.sqrt() + zeta2 * eta;
        println!("{eta:>8.0e} {hi:>12.6} {up:>12.6} {lo:>12.6} {down:>12.6}");
    }
    Ok(())
}
