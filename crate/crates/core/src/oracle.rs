//! Brute-force solver of `max/min E_f[h]` subject to `KL(f || f_0) <= eta`
//! on small finite supports.
//!
//! A single input is solved by a scan of the exponential-tilt family. For
//! longer horizons the objective is a non-convex polynomial in the marginal,
//! so the oracle runs Nelder-Mead from many starts over a parametrization of
//! the KL ball and keeps the best point found.

use std::f64::consts::FRAC_PI_2;

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact1d::Sense;
use crate::fixedpoint::LikelihoodVector;
use crate::model::{stream_id, stream_rng, FiniteDistribution};
use crate::symmetrize::{CostSpec, EnumeratedCost};

pub const MAX_SUPPORT: usize = 8;
pub const MAX_HORIZON: usize = 3;
/// Stream purpose tag of restart draws.
pub const RESTART_STREAM: u16 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleMethod {
    TiltClosedForm,
    SimplexSearch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub optimum: f64,
    pub argmax: FiniteDistribution,
    pub kl_at_opt: f64,
    pub method: OracleMethod,
    pub restarts: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleOptions {
    /// Random Dirichlet restarts, on top of the structured starts.
    pub restarts: usize,
    pub seed: u64,
    pub max_iters: u64,
    /// Likelihood ratios to start from, e.g. a fixed-point solution.
    pub seeds: Vec<LikelihoodVector>,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            restarts: 60,
            seed: 0,
            max_iters: 4000,
            seeds: Vec::new(),
        }
    }
}

pub fn brute_force(dist: &FiniteDistribution, cost: &CostSpec, eta: f64, sense: Sense) -> Result<OracleResult> {
    brute_force_with(dist, cost, eta, sense, &OracleOptions::default())
}

pub fn brute_force_with(
    dist: &FiniteDistribution,
    cost: &CostSpec,
    eta: f64,
    sense: Sense,
    opts: &OracleOptions,
) -> Result<OracleResult> {
    if !(eta.is_finite() && eta >= 0.0) {
        return Err(Error::validation(format!("eta must be finite and >= 0, got {eta}")));
    }
    if dist.len() > MAX_SUPPORT {
        return Err(Error::Budget(format!(
            "oracle support {} exceeds {MAX_SUPPORT}",
            dist.len()
        )));
    }
    let horizon = cost
        .horizon
        .fixed_len()
        .ok_or_else(|| Error::validation("oracle needs a deterministic horizon"))?;
    if horizon > MAX_HORIZON {
        return Err(Error::Budget(format!("oracle horizon {horizon} exceeds {MAX_HORIZON}")));
    }
    let table = EnumeratedCost::new(dist, cost)?;
    if eta == 0.0 {
        return Ok(OracleResult {
            optimum: table.mean(),
            argmax: dist.clone(),
            kl_at_opt: 0.0,
            method: if horizon == 1 {
                OracleMethod::TiltClosedForm
            } else {
                OracleMethod::SimplexSearch
            },
            restarts: 0,
        });
    }
    if horizon == 1 {
        tilt_scan(dist, table.values(), eta, sense)
    } else {
        simplex_search(dist, &table, eta, sense, opts)
    }
}

fn kl_from(q: &[f64], p: &[f64]) -> f64 {
    q.iter()
        .zip(p)
        .filter(|(qi, _)| **qi > 0.0)
        .map(|(qi, pi)| qi * (qi / pi).ln())
        .sum::<f64>()
        .max(0.0)
}

/// Member `p e^{s d} / E[e^{s d}]` of the exponential family along `d`, with
/// `d` centered at its `p` mean to keep `s` small-scale terms well conditioned.
fn family(p: &[f64], d: &[f64], s: f64) -> (Vec<f64>, f64) {
    let c: f64 = p.iter().zip(d).map(|(a, b)| a * b).sum();
    let z: Vec<f64> = d.iter().map(|v| s * (v - c)).collect();
    let m = z
        .iter()
        .zip(p)
        .filter(|(_, pi)| **pi > 0.0)
        .map(|(v, _)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = z.iter().zip(p).map(|(v, pi)| pi * (v - m).exp()).collect();
    let total: f64 = w.iter().sum();
    let q: Vec<f64> = w.iter().map(|v| v / total).collect();
    // KL = s E_q[d - c] - log E_p[e^{s (d - c)}]
    let eq: f64 = q.iter().zip(&z).map(|(a, b)| a * b).sum();
    let kl = (eq - (m + total.ln())).max(0.0);
    (q, kl)
}

/// Distribution on the sphere `KL = target` along direction `d` (or the
/// limiting point mass on the top set of `d` when the sphere is out of reach).
fn on_sphere(p: &[f64], d: &[f64], target: f64) -> Vec<f64> {
    let c: f64 = p.iter().zip(d).map(|(a, b)| a * b).sum();
    let spread = d
        .iter()
        .zip(p)
        .filter(|(_, pi)| **pi > 0.0)
        .map(|(v, _)| (v - c).abs())
        .fold(0.0, f64::max);
    if target <= 0.0 || spread < 1e-300 {
        return p.to_vec();
    }
    let mut hi = 1.0 / spread;
    loop {
        let (q, kl) = family(p, d, hi);
        if kl >= target {
            break;
        }
        if hi * spread > 1e6 {
            // sup of the family is below the target; the top set is feasible
            return q;
        }
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if family(p, d, mid).1 < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    family(p, d, lo).0
}

fn tilt_scan(dist: &FiniteDistribution, h: &[f64], eta: f64, sense: Sense) -> Result<OracleResult> {
    let p = dist.probs();
    let signed: Vec<f64> = h.iter().map(|v| sense.sign() * v).collect();
    let q = on_sphere(p, &signed, eta);
    let optimum = q.iter().zip(h).map(|(a, b)| a * b).sum();
    Ok(OracleResult {
        optimum,
        kl_at_opt: kl_from(&q, p),
        argmax: dist.with_probs(q)?,
        method: OracleMethod::TiltClosedForm,
        restarts: 1,
    })
}

#[derive(Clone, Copy)]
struct Ball<'a> {
    p: &'a [f64],
    table: &'a EnumeratedCost,
    eta: f64,
    sign: f64,
}

impl Ball<'_> {
    /// Parameters are a direction and an angle; the radius is `eta sin^2`.
    fn point(&self, z: &[f64]) -> Vec<f64> {
        let n = self.p.len();
        let radius = self.eta * z[n].sin().powi(2);
        on_sphere(self.p, &z[..n], radius)
    }

    fn value(&self, q: &[f64]) -> f64 {
        let l: Vec<f64> = q
            .iter()
            .zip(self.p)
            .map(|(a, b)| if *b > 0.0 { a / b } else { 0.0 })
            .collect();
        self.table.weighted_mean(&l)
    }
}

impl CostFunction for Ball<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, z: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        Ok(-self.sign * self.value(&self.point(z)))
    }
}

fn local_search(ball: &Ball<'_>, start: Vec<f64>, max_iters: u64) -> Vec<f64> {
    let dim = start.len();
    let scale = start[..dim - 1].iter().map(|v| v.abs()).fold(0.0, f64::max).max(0.5);
    let mut simplex = vec![start.clone()];
    for k in 0..dim {
        let mut v = start.clone();
        v[k] += if k == dim - 1 { -0.3 } else { 0.3 * scale };
        simplex.push(v);
    }
    let solver = NelderMead::new(simplex)
        .with_sd_tolerance(1e-15)
        .expect("valid tolerance");
    match Executor::new(*ball, solver).configure(|s| s.max_iters(max_iters)).run() {
        Ok(res) => res.state().get_best_param().cloned().unwrap_or(start),
        Err(_) => start,
    }
}

fn dirichlet<R: rand::Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(1.0, 1.0).expect("valid gamma");
    let w: Vec<f64> = (0..n)
        .map(|_| Distribution::<f64>::sample(&gamma, rng).max(1e-300))
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

fn simplex_search(
    dist: &FiniteDistribution,
    table: &EnumeratedCost,
    eta: f64,
    sense: Sense,
    opts: &OracleOptions,
) -> Result<OracleResult> {
    let p = dist.probs();
    let n = p.len();
    let ball = Ball {
        p,
        table,
        eta,
        sign: sense.sign(),
    };

    let mut starts: Vec<Vec<f64>> = Vec::new();
    let with_angle = |d: Vec<f64>| {
        let mut z = d;
        z.push(FRAC_PI_2);
        z
    };
    let g = table.conditional_sum(&vec![1.0; n]);
    starts.push(with_angle(g.iter().map(|v| sense.sign() * v).collect()));
    starts.push(with_angle(g.iter().map(|v| -sense.sign() * v).collect()));
    for l in &opts.seeds {
        if l.weights.len() == n && l.weights.iter().all(|w| *w > 0.0) {
            starts.push(with_angle(l.weights.iter().map(|w| w.ln()).collect()));
        }
    }
    let mut rng = stream_rng(opts.seed, stream_id(RESTART_STREAM, 0));
    for _ in 0..opts.restarts {
        let q = dirichlet(n, &mut rng);
        starts.push(with_angle(
            q.iter().zip(p).map(|(a, b)| (a / b.max(1e-300)).ln()).collect(),
        ));
    }

    let found: Vec<(f64, Vec<f64>)> = starts
        .into_par_iter()
        .map(|z| {
            let best = local_search(&ball, z, opts.max_iters);
            let q = ball.point(&best);
            (ball.sign * ball.value(&q), q)
        })
        .collect();
    // the benchmark itself is always feasible
    let mut best = (ball.sign * ball.value(p), p.to_vec());
    for cand in found.iter() {
        if cand.0 > best.0 {
            best = cand.clone();
        }
    }
    let q = best.1;
    Ok(OracleResult {
        optimum: ball.value(&q),
        kl_at_opt: kl_from(&q, p),
        argmax: dist.with_probs(q)?,
        method: OracleMethod::SimplexSearch,
        restarts: found.len(),
    })
}
