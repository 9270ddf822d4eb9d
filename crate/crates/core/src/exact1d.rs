//! Exact worst/best case for a single input variable on a finite support.
//!
//! The optimal change of measure is the exponential tilt `p_i e^{b h_i} / E[e^{b h}]`
//! with `b` the root on the correct sign branch of `b psi'(b) - psi(b) = eta`,
//! where `psi` is the log moment generating function of `h`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{cumulants, FiniteDistribution};

/// Variance gate below which a cost is treated as constant.
pub const DEGENERACY_THRESHOLD: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Max,
    Min,
}

impl Sense {
    pub fn sign(self) -> f64 {
        match self {
            Sense::Max => 1.0,
            Sense::Min => -1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TiltSolution {
    pub beta_star: f64,
    pub eta: f64,
    /// `psi'(beta_star)`, the optimal expected cost.
    pub optimum: f64,
    pub psi_at_beta: f64,
}

/// Returns `(psi(beta), psi'(beta))`, computed with a max shift.
pub fn log_mgf(h_values: &[f64], probs: &[f64], beta: f64) -> Result<(f64, f64)> {
    if h_values.len() != probs.len() || h_values.is_empty() {
        return Err(Error::validation(
            "h values and probabilities must be non-empty and aligned",
        ));
    }
    let shift = h_values
        .iter()
        .zip(probs)
        .filter(|(_, &p)| p > 0.0)
        .map(|(h, _)| beta * h)
        .fold(f64::NEG_INFINITY, f64::max);
    if !shift.is_finite() {
        return Err(Error::NumericRange(format!("beta * h is not finite at beta = {beta}")));
    }
    let (mut z, mut zh) = (0.0, 0.0);
    for (&h, &p) in h_values.iter().zip(probs) {
        if p > 0.0 {
            let w = p * (beta * h - shift).exp();
            z += w;
            zh += w * h;
        }
    }
    let psi = shift + z.ln();
    let psi_prime = zh / z;
    if !psi.is_finite() || !psi_prime.is_finite() {
        return Err(Error::NumericRange(format!("log mgf overflow at beta = {beta}")));
    }
    Ok((psi, psi_prime))
}

/// `b psi'(b) - psi(b)` and its derivative `b psi''(b)`, for centered `h`.
fn tilt_kl(centered: &[f64], probs: &[f64], beta: f64) -> (f64, f64) {
    let reach = centered
        .iter()
        .zip(probs)
        .filter(|(_, &p)| p > 0.0)
        .map(|(h, _)| (beta * h).abs())
        .fold(0.0, f64::max);
    // Small exponents go through expm1/ln_1p so that psi = O(b^2) keeps its digits.
    let shift = if reach < 1.0 {
        0.0
    } else {
        centered
            .iter()
            .zip(probs)
            .filter(|(_, &p)| p > 0.0)
            .map(|(h, _)| beta * h)
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let (mut zm1, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for (&h, &p) in centered.iter().zip(probs) {
        if p > 0.0 {
            let e = (beta * h - shift).exp_m1();
            zm1 += p * e;
            m1 += p * h * (1.0 + e);
            m2 += p * h * h * (1.0 + e);
        }
    }
    let z = 1.0 + zm1;
    let mean = m1 / z;
    let var = (m2 / z - mean * mean).max(0.0);
    let log_z = shift + zm1.ln_1p();
    let kl = beta * mean - log_z;
    (kl.max(0.0), beta * var)
}

/// Solves the single-variable program `max/min E_f[h]` s.t. `D(f || p) <= eta`.
pub fn solve_tilt(dist: &FiniteDistribution, h: &[f64], eta: f64, sense: Sense) -> Result<TiltSolution> {
    if h.len() != dist.len() {
        return Err(Error::validation("h must have one value per atom"));
    }
    if !(eta >= 0.0) || !eta.is_finite() {
        return Err(Error::validation(format!("eta must be finite and >= 0, got {eta}")));
    }
    let probs = dist.probs();
    let cum = cumulants(h, probs)?;
    if eta == 0.0 {
        return Ok(TiltSolution {
            beta_star: 0.0,
            eta,
            optimum: cum.mean,
            psi_at_beta: 0.0,
        });
    }
    if cum.variance <= DEGENERACY_THRESHOLD {
        return Err(Error::Degeneracy {
            assumption: "non-degeneracy of h",
            subject: "h(X)",
            variance: cum.variance,
        });
    }
    let sign = sense.sign();
    // Solve on the max branch for sign * (h - mean); the min branch is its mirror.
    let centered: Vec<f64> = h.iter().map(|v| sign * (v - cum.mean)).collect();
    let top = centered.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let top_mass: f64 = centered
        .iter()
        .zip(probs)
        .filter(|(c, _)| **c == top)
        .map(|(_, p)| p)
        .sum();
    let eta_cap = -top_mass.ln();
    if eta >= eta_cap {
        return Err(Error::Regime(format!(
            "eta = {eta} reaches the divergence {eta_cap} of the point mass on the extreme atoms; \
             no interior tilt attains it"
        )));
    }

    let eq = |b: f64| {
        let (kl, d) = tilt_kl(&centered, probs, b);
        (kl - eta, d)
    };
    let mut lo = 0.0;
    let mut hi = (2.0 * eta / cum.variance).sqrt().max(1e-300);
    let mut grow = 0;
    while eq(hi).0 < 0.0 {
        lo = hi;
        hi *= 2.0;
        grow += 1;
        if grow > 2000 || !hi.is_finite() {
            return Err(Error::NumericRange("failed to bracket the tilt parameter".into()));
        }
    }
    let mut b = 0.5 * (lo + hi);
    for _ in 0..200 {
        let (f, d) = eq(b);
        if f == 0.0 {
            break;
        }
        if f < 0.0 {
            lo = b;
        } else {
            hi = b;
        }
        let newton = b - f / d;
        let next = if d > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - b).abs() <= 1e-16 * b.abs() || hi - lo <= 1e-16 * hi {
            b = next;
            break;
        }
        b = next;
    }

    let beta_star = sign * b;
    let (psi, psi_prime) = log_mgf(h, probs, beta_star)?;
    let residual = eq(b).0.abs();
    if residual > 1e-10 * eta.max(1e-300) && residual > 1e-14 {
        return Err(Error::NumericRange(format!(
            "tilt equation residual {residual:e} at eta = {eta}"
        )));
    }
    Ok(TiltSolution {
        beta_star,
        eta,
        optimum: psi_prime,
        psi_at_beta: psi,
    })
}

/// `(zeta1, zeta2) = (sqrt(2 Var h), kappa3(h) / (3 Var h))`.
pub fn expansion1d(dist: &FiniteDistribution, h: &[f64]) -> Result<(f64, f64)> {
    if h.len() != dist.len() {
        return Err(Error::validation("h must have one value per atom"));
    }
    let c = cumulants(h, dist.probs())?;
    if c.variance <= DEGENERACY_THRESHOLD {
        return Err(Error::Degeneracy {
            assumption: "non-degeneracy of h",
            subject: "h(X)",
            variance: c.variance,
        });
    }
    Ok(((2.0 * c.variance).sqrt(), c.kappa3 / (3.0 * c.variance)))
}

/// Probabilities of the tilted law `p e^{beta h} / E[e^{beta h}]`.
pub fn tilted_probs(h: &[f64], probs: &[f64], beta: f64) -> Result<Vec<f64>> {
    let (psi, _) = log_mgf(h, probs, beta)?;
    Ok(h.iter().zip(probs).map(|(v, p)| p * (beta * v - psi).exp()).collect())
}
