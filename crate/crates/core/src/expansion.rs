//! Derivative coefficients, approximation bands and parametric dominance.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact1d::{Sense, DEGENERACY_THRESHOLD};
use crate::model::{cumulants, FiniteDistribution};
use crate::symmetrize::{
    pair_nu_exact, pair_tilde_exact, random::TruncatedPair, CostSpec, EnumeratedCost, HorizonSpec,
    RandomizedHorizonConfig,
};

pub const REPORT_SCHEMA: &str = "klsens-report/1";

/// Which optimization direction(s) a report covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ReportSense {
    #[default]
    Max,
    Min,
    Both,
}

impl ReportSense {
    pub fn senses(self) -> &'static [Sense] {
        match self {
            ReportSense::Max => &[Sense::Max],
            ReportSense::Min => &[Sense::Min],
            ReportSense::Both => &[Sense::Max, Sense::Min],
        }
    }
}

impl From<Sense> for ReportSense {
    fn from(s: Sense) -> Self {
        match s {
            Sense::Max => ReportSense::Max,
            Sense::Min => ReportSense::Min,
        }
    }
}

/// Signed expansion coefficients for one direction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub sense: Sense,
    pub first: f64,
    pub second: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub low: f64,
    pub high: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportIntervals {
    pub benchmark_mean: Option<Interval>,
    pub zeta1: Option<Interval>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivativeReport {
    pub schema: String,
    pub benchmark_mean: f64,
    /// Magnitude of the first-order coefficient.
    pub zeta1: f64,
    pub zeta2: Option<f64>,
    pub var_g: f64,
    pub kappa3_g: Option<f64>,
    pub nu: Option<f64>,
    pub sense: ReportSense,
    pub coefficients: Vec<Coefficients>,
    /// `zeta1 / |benchmark_mean|`; absent when the benchmark is zero.
    pub relative_impact: Option<f64>,
    pub ci: Option<ReportIntervals>,
}

impl DerivativeReport {
    /// Signed coefficients for `sense`: `(+-zeta1, zeta2)`.
    pub fn signed(&self, sense: Sense) -> (f64, Option<f64>) {
        (sense.sign() * self.zeta1, self.zeta2)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn check_var(var_g: f64) -> Result<()> {
    if !var_g.is_finite() {
        return Err(Error::NumericRange(format!("variance of g is {var_g}")));
    }
    if var_g <= DEGENERACY_THRESHOLD {
        return Err(Error::Degeneracy {
            assumption: "non-degeneracy of g(X)",
            subject: "symmetrized cost g(X)",
            variance: var_g,
        });
    }
    Ok(())
}

fn relative(zeta1: f64, benchmark: f64) -> Option<f64> {
    (benchmark != 0.0).then(|| zeta1 / benchmark.abs())
}

fn assemble(
    var_g: f64,
    kappa3_g: Option<f64>,
    nu: Option<f64>,
    zeta2: Option<f64>,
    benchmark: f64,
    sense: ReportSense,
) -> DerivativeReport {
    let zeta1 = (2.0 * var_g).sqrt();
    DerivativeReport {
        schema: REPORT_SCHEMA.to_string(),
        benchmark_mean: benchmark,
        zeta1,
        zeta2,
        var_g,
        kappa3_g,
        nu,
        sense,
        coefficients: sense
            .senses()
            .iter()
            .map(|&s| Coefficients {
                sense: s,
                first: s.sign() * zeta1,
                second: zeta2,
            })
            .collect(),
        relative_impact: relative(zeta1, benchmark),
        ci: None,
    }
}

/// Full second-order report from exact components.
pub fn derive(var_g: f64, kappa3_g: f64, nu: f64, benchmark: f64, sense: ReportSense) -> Result<DerivativeReport> {
    check_var(var_g)?;
    if !(kappa3_g.is_finite() && nu.is_finite() && benchmark.is_finite()) {
        return Err(Error::NumericRange("non-finite report component".into()));
    }
    let zeta2 = (kappa3_g / 3.0 + nu) / var_g;
    Ok(assemble(var_g, Some(kappa3_g), Some(nu), Some(zeta2), benchmark, sense))
}

/// First-order report, typically from a nested Monte Carlo estimate of `Var(g)`.
pub fn derive_first_order(var_g: f64, benchmark: f64, sense: ReportSense) -> Result<DerivativeReport> {
    check_var(var_g)?;
    Ok(assemble(var_g, None, None, None, benchmark, sense))
}

/// Report from a sectioned `zeta1` estimate with its interval.
pub fn from_estimates(
    benchmark: f64,
    benchmark_ci: Option<Interval>,
    zeta1: f64,
    zeta1_ci: Option<Interval>,
    sense: ReportSense,
) -> Result<DerivativeReport> {
    if !(zeta1.is_finite() && zeta1 >= 0.0) {
        return Err(Error::NumericRange(format!("zeta1 estimate {zeta1}")));
    }
    let mut report = assemble(zeta1 * zeta1 / 2.0, None, None, None, benchmark, sense);
    report.zeta1 = zeta1;
    for c in &mut report.coefficients {
        c.first = c.sense.sign() * zeta1;
    }
    report.relative_impact = relative(zeta1, benchmark);
    report.ci = Some(ReportIntervals {
        benchmark_mean: benchmark_ci,
        zeta1: zeta1_ci,
    });
    Ok(report)
}

/// Exact report on a finite support for a fixed or random horizon.
pub fn analyze_exact(
    dist: &FiniteDistribution,
    cost: &CostSpec,
    config: &RandomizedHorizonConfig,
    sense: ReportSense,
) -> Result<DerivativeReport> {
    let (g, nu, benchmark) = match cost.horizon {
        HorizonSpec::Random(_) => {
            let TruncatedPair { g, nu, mean, .. } = pair_tilde_exact(dist, cost, config)?;
            (g, nu, mean)
        }
        _ => {
            let benchmark = EnumeratedCost::new(dist, cost)?.mean();
            let p = pair_nu_exact(dist, cost)?;
            (p.g, p.nu, benchmark)
        }
    };
    let c = cumulants(&g, dist.probs())?;
    derive(c.variance, c.kappa3, nu, benchmark, sense)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Order {
    First,
    Second,
}

impl TryFrom<u8> for Order {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        match v {
            1 => Ok(Order::First),
            2 => Ok(Order::Second),
            _ => Err(Error::validation(format!("order must be 1 or 2, got {v}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepLine {
    pub eta: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub benchmark: f64,
}

impl SweepLine {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("eta,lower,upper,benchmark\n");
        for i in 0..self.eta.len() {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                self.eta[i], self.lower[i], self.upper[i], self.benchmark
            );
        }
        out
    }
}

/// Approximation bands `benchmark -+ zeta1 sqrt(eta) (+ zeta2 eta)`.
pub fn sweep(report: &DerivativeReport, eta_grid: &[f64], order: Order) -> Result<SweepLine> {
    if let Some(bad) = eta_grid.iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
        return Err(Error::validation(format!("eta must be finite and >= 0, got {bad}")));
    }
    let shift = match order {
        Order::First => 0.0,
        Order::Second => report
            .zeta2
            .ok_or_else(|| Error::validation("second-order sweep needs zeta2, which this report lacks"))?,
    };
    let b = report.benchmark_mean;
    let (lower, upper) = eta_grid
        .iter()
        .map(|&e| {
            let half = report.zeta1 * e.sqrt();
            (b - half + shift * e, b + half + shift * e)
        })
        .unzip();
    Ok(SweepLine {
        eta: eta_grid.to_vec(),
        lower,
        upper,
        benchmark: b,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DominanceReport {
    pub dominated: bool,
    pub rescaled: f64,
    /// `zeta1 - |rescaled|`.
    pub margin: f64,
}

/// Checks `|param_derivative / param_kl_rate| <= zeta1`, where `param_kl_rate`
/// is `d sqrt(KL) / d theta` of the parametric family at the benchmark.
pub fn dominance_check(param_derivative: f64, param_kl_rate: f64, zeta1: f64) -> Result<DominanceReport> {
    if !(param_kl_rate.is_finite() && param_kl_rate > 0.0) {
        return Err(Error::validation(format!(
            "parametric KL rate must be positive, got {param_kl_rate}"
        )));
    }
    let rescaled = param_derivative / param_kl_rate;
    let margin = zeta1.abs() - rescaled.abs();
    Ok(DominanceReport {
        dominated: margin >= -1e-12 * zeta1.abs().max(1.0),
        rescaled,
        margin,
    })
}
