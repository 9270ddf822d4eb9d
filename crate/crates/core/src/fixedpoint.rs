//! Optimal change of measure for fixed horizons on finite supports.
//!
//! The maximizer of `E_0[h prod_t L(X_t)]` over likelihood ratios with
//! `E_0[L log L] = eta` is the fixed point of
//! `K(L)(x) = exp(g^L(x) / alpha) / E_0[exp(g^L(X) / alpha)]`, where
//! `g^L(x) = sum_t E_0[h prod_{r != t} L(X_r) | X_t = x]` and `alpha` is
//! calibrated to the budget.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact1d::DEGENERACY_THRESHOLD;
use crate::model::{cumulants, FiniteDistribution};
use crate::symmetrize::{centered_triple, pair_table, CostSpec, EnumeratedCost, PairSum};

/// Residuals that fail to decrease over this many consecutive iterations
/// signal a lost contraction.
pub const STAGNATION_WINDOW: usize = 10;
/// Residual level treated as the floating-point floor of the iteration.
pub const RESIDUAL_FLOOR: f64 = 1e-12;

/// Likelihood ratio over the atoms of a finite support.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodVector {
    pub weights: Vec<f64>,
}

impl LikelihoodVector {
    pub fn ones(n: usize) -> Self {
        LikelihoodVector { weights: vec![1.0; n] }
    }

    /// Checks `L >= 0` and `E_0[L] = 1` within `1e-12`.
    pub fn validate(&self, probs: &[f64]) -> Result<()> {
        if self.weights.len() != probs.len() {
            return Err(Error::validation("likelihood vector length differs from support"));
        }
        if self.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::validation("likelihood weights must be finite and >= 0"));
        }
        let mean = mean_under(probs, &self.weights);
        if (mean - 1.0).abs() > 1e-12 {
            return Err(Error::validation(format!("E_0[L] = {mean}, expected 1")));
        }
        Ok(())
    }

    /// `E_0[L log L]`.
    pub fn kl(&self, probs: &[f64]) -> f64 {
        probs
            .iter()
            .zip(&self.weights)
            .filter(|(_, l)| **l > 0.0)
            .map(|(p, l)| p * l * l.ln())
            .sum::<f64>()
            .max(0.0)
    }

    pub fn distribution(&self, base: &FiniteDistribution) -> Result<FiniteDistribution> {
        let probs: Vec<f64> = base.probs().iter().zip(&self.weights).map(|(p, l)| p * l).collect();
        base.with_probs(probs)
    }
}

fn mean_under(probs: &[f64], v: &[f64]) -> f64 {
    probs.iter().zip(v).map(|(p, x)| p * x).sum()
}

fn l1_under(probs: &[f64], a: &[f64], b: &[f64]) -> f64 {
    probs
        .iter()
        .zip(a.iter().zip(b))
        .map(|(p, (x, y))| p * (x - y).abs())
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedPointSolution {
    pub l_star: LikelihoodVector,
    pub alpha: f64,
    pub kl: f64,
    pub objective: f64,
    pub iterations: usize,
    /// `||K(L*) - L*||_1` under `P_0`, recomputed after termination.
    pub residual: f64,
    /// `||L_(k+1) - L_k||_1` for every iteration.
    pub residual_history: Vec<f64>,
    /// Last observed ratio of consecutive residuals.
    pub contraction_factor: f64,
}

impl FixedPointSolution {
    pub fn beta(&self) -> f64 {
        1.0 / self.alpha
    }
}

/// Iteration controls.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-12,
            max_iter: 10_000,
        }
    }
}

/// A finite-support instance with its cost tabulated once.
#[derive(Clone, Debug)]
pub struct FixedPointProblem {
    dist: FiniteDistribution,
    table: EnumeratedCost,
}

impl FixedPointProblem {
    pub fn new(dist: &FiniteDistribution, cost: &CostSpec) -> Result<Self> {
        Ok(FixedPointProblem {
            dist: dist.clone(),
            table: EnumeratedCost::new(dist, cost)?,
        })
    }

    pub fn dist(&self) -> &FiniteDistribution {
        &self.dist
    }

    pub fn table(&self) -> &EnumeratedCost {
        &self.table
    }

    pub fn horizon(&self) -> usize {
        self.table.horizon()
    }

    /// `E_0[h prod_t L(X_t)]`.
    pub fn objective(&self, l: &LikelihoodVector) -> f64 {
        self.table.weighted_mean(&l.weights)
    }

    /// `g^L` at every atom.
    pub fn g_l(&self, l: &LikelihoodVector) -> Vec<f64> {
        self.table.conditional_sum(&l.weights)
    }

    pub fn apply_k(&self, l: &LikelihoodVector, alpha: f64) -> Result<LikelihoodVector> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::validation(format!("alpha must be positive, got {alpha}")));
        }
        let g = self.g_l(l);
        Ok(LikelihoodVector {
            weights: tilt(&g, self.dist.probs(), 1.0 / alpha)?,
        })
    }

    pub fn solve(&self, alpha: f64, start: &LikelihoodVector, opts: SolveOptions) -> Result<FixedPointSolution> {
        if start.weights.len() != self.dist.len() || start.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::validation("start must be a nonnegative vector over the support"));
        }
        if !(opts.tol > 0.0) || opts.max_iter == 0 {
            return Err(Error::validation("tolerance and iteration cap must be positive"));
        }
        let probs = self.dist.probs();
        let mut current = start.clone();
        let mut history: Vec<f64> = Vec::new();
        let mut factor = 0.0;
        let mut stagnant = 0usize;
        loop {
            let next = self.apply_k(&current, alpha)?;
            let r = l1_under(probs, &next.weights, &current.weights);
            if let Some(&prev) = history.last() {
                if prev > 0.0 {
                    factor = r / prev;
                }
                stagnant = if r >= prev { stagnant + 1 } else { 0 };
            }
            history.push(r);
            current = next;
            if r <= opts.tol || (stagnant >= STAGNATION_WINDOW && r <= RESIDUAL_FLOOR) {
                break;
            }
            if stagnant >= STAGNATION_WINDOW || history.len() >= opts.max_iter {
                return Err(Error::ContractionFailure {
                    alpha,
                    iterations: history.len(),
                    factor,
                    residual: r,
                });
            }
        }
        let check = self.apply_k(&current, alpha)?;
        let residual = l1_under(probs, &check.weights, &current.weights);
        Ok(FixedPointSolution {
            kl: current.kl(probs),
            objective: self.objective(&current),
            l_star: current,
            alpha,
            iterations: history.len(),
            residual,
            residual_history: history,
            contraction_factor: factor,
        })
    }

    fn cost_range(&self) -> f64 {
        let v = self.table.values();
        let (lo, hi) = v
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        hi - lo
    }

    /// Finds `alpha` with `|E_0[L* log L*] - eta| <= tol` by bisection in `log alpha`.
    pub fn calibrate(&self, eta: f64, tol: f64, opts: SolveOptions) -> Result<FixedPointSolution> {
        if !(eta.is_finite() && eta > 0.0) {
            return Err(Error::validation(format!("eta must be positive, got {eta}")));
        }
        if !(tol > 0.0) {
            return Err(Error::validation("calibration tolerance must be positive"));
        }
        let range = self.cost_range();
        if range <= 0.0 {
            return Err(Error::Degeneracy {
                assumption: "non-degeneracy of g(X)",
                subject: "cost",
                variance: 0.0,
            });
        }
        let n = self.dist.len();
        let mut evals: Vec<(f64, f64)> = Vec::new();
        let mut run = |alpha: f64, start: &LikelihoodVector| -> Result<FixedPointSolution> {
            let sol = self.solve(alpha, start, opts)?;
            evals.push((alpha, sol.kl));
            Ok(sol)
        };
        let ones = LikelihoodVector::ones(n);
        let first = run(10.0 * range, &ones)?;
        if (first.kl - eta).abs() <= tol {
            return Ok(first);
        }
        // hi: kl < eta (large alpha), lo: kl > eta (small alpha)
        let (mut hi, mut lo) = if first.kl < eta {
            (first, None)
        } else {
            (first.clone(), Some(first))
        };
        if lo.is_some() {
            let mut s = hi.clone();
            while s.kl > eta {
                s = run(s.alpha * 2.0, &s.l_star)?;
                if s.alpha > 1e300 {
                    return Err(Error::NumericRange("alpha bracket overflowed".into()));
                }
            }
            hi = s;
        } else {
            let mut s = hi.clone();
            while s.kl < eta {
                if s.alpha < range * 1e-10 {
                    return Err(Error::Regime(format!(
                        "KL of the fixed point stays below {eta:e} as alpha shrinks; budget beyond the attainable range"
                    )));
                }
                let next = match run(s.alpha / 2.0, &s.l_star) {
                    Ok(v) => v,
                    Err(Error::ContractionFailure { alpha, .. }) => {
                        return Err(Error::Regime(format!(
                            "no fixed point with KL >= {eta:e} before the iteration stopped contracting at alpha = {alpha:e}"
                        )));
                    }
                    Err(Error::NumericRange(msg)) => {
                        return Err(Error::Regime(format!("no fixed point with KL >= {eta:e}: {msg}")));
                    }
                    Err(e) => return Err(e),
                };
                if next.kl < s.kl - 1e-15 {
                    return Err(Error::Regime("KL not monotone in alpha along fixed points".into()));
                }
                if next.kl < eta {
                    s = next;
                } else {
                    lo = Some(next);
                    break;
                }
            }
            hi = s;
        }
        let mut lo = lo.expect("bracket found");
        for _ in 0..200 {
            let mid = (hi.alpha * lo.alpha).sqrt();
            let start = if (hi.kl - eta).abs() < (lo.kl - eta).abs() {
                &hi.l_star
            } else {
                &lo.l_star
            };
            let s = run(mid, &start.clone())?;
            if (s.kl - eta).abs() <= tol {
                return Ok(s);
            }
            if s.kl > lo.kl + 1e-15 || s.kl < hi.kl - 1e-15 {
                return Err(Error::Regime("KL not monotone in alpha along fixed points".into()));
            }
            if s.kl < eta {
                hi = s;
            } else {
                lo = s;
            }
            if (lo.alpha / hi.alpha - 1.0).abs() < 1e-15 {
                break;
            }
        }
        let best = if (hi.kl - eta).abs() < (lo.kl - eta).abs() {
            hi
        } else {
            lo
        };
        if (best.kl - eta).abs() <= tol.max(1e-14 * eta) {
            Ok(best)
        } else {
            Err(Error::NumericRange(format!(
                "alpha calibration stalled at KL {} for eta {eta}",
                best.kl
            )))
        }
    }

    /// First- and second-order ingredients of the expansion of `L*`.
    pub fn quadratic_terms(&self) -> Result<QuadraticTerms> {
        let probs = self.dist.probs();
        let n = probs.len();
        let t_len = self.table.horizon();
        let g = self.table.conditional_sum(&vec![1.0; n]);
        let c = cumulants(&g, probs)?;
        if c.variance <= DEGENERACY_THRESHOLD {
            return Err(Error::Degeneracy {
                assumption: "non-degeneracy of g(X)",
                subject: "symmetrized cost g(X)",
                variance: c.variance,
            });
        }
        let centered: Vec<f64> = g.iter().map(|v| v - c.mean).collect();
        let mut w = vec![0.0; n];
        let mut idx = vec![0usize; t_len];
        for (index, h) in self.table.values().iter().enumerate() {
            for (slot, i) in idx.iter_mut().zip(self.table.path(index)) {
                *slot = i;
            }
            for t in 0..t_len {
                let others: f64 = idx
                    .iter()
                    .enumerate()
                    .filter(|(r, _)| *r != t)
                    .map(|(_, &i)| probs[i])
                    .product();
                let dev: f64 = (0..t_len).filter(|&r| r != t).map(|r| centered[idx[r]]).sum();
                w[idx[t]] += h * others * dev;
            }
        }
        let ew = mean_under(probs, &w);
        let v: Vec<f64> = (0..n)
            .map(|i| w[i] - ew + 0.5 * (centered[i].powi(2) - c.variance))
            .collect();
        let e_gv = mean_under(probs, &g.iter().zip(&v).map(|(a, b)| a * b).collect::<Vec<_>>());
        let nu = if t_len == 1 {
            0.0
        } else {
            let pair = pair_table(&self.table, PairSum::Full);
            centered_triple(probs, &pair, &g)
        };
        Ok(QuadraticTerms {
            g_centered: centered,
            w,
            v,
            mean_h: self.table.mean(),
            var_g: c.variance,
            kappa3_g: c.kappa3,
            e_gv,
            nu,
        })
    }

    pub fn quadratic_approx(&self, beta: f64) -> Result<Vec<f64>> {
        Ok(self.quadratic_terms()?.approx(beta))
    }
}

/// Expansion ingredients: `L* = 1 + beta (g - E g) + beta^2 V + O(beta^3)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticTerms {
    pub g_centered: Vec<f64>,
    pub w: Vec<f64>,
    pub v: Vec<f64>,
    pub mean_h: f64,
    pub var_g: f64,
    pub kappa3_g: f64,
    /// `E_0[g V]`.
    pub e_gv: f64,
    pub nu: f64,
}

impl QuadraticTerms {
    pub fn approx(&self, beta: f64) -> Vec<f64> {
        self.g_centered
            .iter()
            .zip(&self.v)
            .map(|(g, v)| 1.0 + beta * g + beta * beta * v)
            .collect()
    }

    /// `beta^2 Var/2 + beta^3 (E[gV] - kappa3/6)`.
    pub fn eta_approx(&self, beta: f64) -> f64 {
        beta * beta * self.var_g / 2.0 + beta.powi(3) * (self.e_gv - self.kappa3_g / 6.0)
    }

    /// `E_0 h + beta Var + beta^2 (nu/2 + E[gV])`.
    pub fn objective_approx(&self, beta: f64) -> f64 {
        self.mean_h + beta * self.var_g + beta * beta * (self.nu / 2.0 + self.e_gv)
    }
}

/// `p e^{beta g} / E_0[e^{beta g}]` as likelihood weights, with a max shift.
fn tilt(g: &[f64], probs: &[f64], beta: f64) -> Result<Vec<f64>> {
    let z: Vec<f64> = g.iter().map(|v| beta * v).collect();
    let m = z
        .iter()
        .zip(probs)
        .filter(|(_, p)| **p > 0.0)
        .map(|(v, _)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(Error::NumericRange("tilt exponent is not finite".into()));
    }
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let norm = mean_under(probs, &e);
    if !(norm.is_finite() && norm > 0.0) || e.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericRange(
            "normalizing constant of K overflowed; alpha too small".into(),
        ));
    }
    Ok(e.into_iter().map(|v| v / norm).collect())
}

pub fn apply_k(
    l: &LikelihoodVector,
    alpha: f64,
    dist: &FiniteDistribution,
    cost: &CostSpec,
) -> Result<LikelihoodVector> {
    FixedPointProblem::new(dist, cost)?.apply_k(l, alpha)
}

pub fn solve_fixed_point(
    dist: &FiniteDistribution,
    cost: &CostSpec,
    alpha: f64,
    start: &LikelihoodVector,
    opts: SolveOptions,
) -> Result<FixedPointSolution> {
    FixedPointProblem::new(dist, cost)?.solve(alpha, start, opts)
}

pub fn calibrate_alpha(dist: &FiniteDistribution, cost: &CostSpec, eta: f64, tol: f64) -> Result<FixedPointSolution> {
    FixedPointProblem::new(dist, cost)?.calibrate(eta, tol, SolveOptions::default())
}

pub fn quadratic_approx(dist: &FiniteDistribution, cost: &CostSpec, beta: f64) -> Result<Vec<f64>> {
    FixedPointProblem::new(dist, cost)?.quadratic_approx(beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact1d::{solve_tilt, Sense};
    use crate::symmetrize::HorizonSpec;

    fn three() -> FiniteDistribution {
        FiniteDistribution::new(vec![0.0, 1.0, 2.5], vec![0.3, 0.45, 0.25]).unwrap()
    }

    fn pair_cost() -> CostSpec {
        CostSpec::new(
            |p: &[f64], _: &[f64]| (p[0] - 0.5 * p[1]).powi(2) / 4.0,
            HorizonSpec::Fixed(2),
        )
    }

    #[test]
    fn huge_alpha_is_identity() {
        let d = three();
        let l = apply_k(&LikelihoodVector::ones(3), 1e12, &d, &pair_cost()).unwrap();
        assert!(l.weights.iter().all(|w| (w - 1.0).abs() < 1e-9));
    }

    #[test]
    fn single_variable_k_is_the_tilt() {
        let d = three();
        let cost = CostSpec::new(|p: &[f64], _: &[f64]| p[0] * p[0], HorizonSpec::Single);
        let p = FixedPointProblem::new(&d, &cost).unwrap();
        let a = p.apply_k(&LikelihoodVector::ones(3), 3.0).unwrap();
        let b = p
            .apply_k(
                &LikelihoodVector {
                    weights: vec![2.0, 0.5, 0.7],
                },
                3.0,
            )
            .unwrap();
        assert_eq!(a, b);
        let h = d.map(|x| x * x);
        let z: f64 = d.probs().iter().zip(&h).map(|(p, v)| p * (v / 3.0).exp()).sum();
        for (w, v) in a.weights.iter().zip(&h) {
            assert!((w - (v / 3.0).exp() / z).abs() < 1e-14);
        }
        let sol = p.solve(3.0, &a, SolveOptions::default()).unwrap();
        assert!(sol.iterations <= 1);
    }

    #[test]
    fn two_atom_k_by_hand() {
        let d = FiniteDistribution::new(vec![1.0, 2.0], vec![0.25, 0.75]).unwrap();
        let cost = CostSpec::new(|p: &[f64], _: &[f64]| p[0] * p[1] + p[0], HorizonSpec::Fixed(2));
        let l = LikelihoodVector {
            weights: vec![2.0, 2.0 / 3.0],
        };
        let alpha = 5.0;
        let out = apply_k(&l, alpha, &d, &cost).unwrap();
        let h = |a: f64, b: f64| a * b + a;
        let (x, p) = (d.atoms(), d.probs());
        let gl: Vec<f64> = (0..2)
            .map(|i| {
                (0..2)
                    .map(|j| p[j] * l.weights[j] * (h(x[i], x[j]) + h(x[j], x[i])))
                    .sum::<f64>()
            })
            .collect();
        let z = p[0] * (gl[0] / alpha).exp() + p[1] * (gl[1] / alpha).exp();
        for i in 0..2 {
            assert!((out.weights[i] - (gl[i] / alpha).exp() / z).abs() < 1e-14);
        }
    }

    #[test]
    fn residuals_decay_geometrically() {
        let d = three();
        let p = FixedPointProblem::new(&d, &pair_cost()).unwrap();
        let sol = p
            .solve(
                20.0,
                &LikelihoodVector::ones(3),
                SolveOptions {
                    tol: 1e-13,
                    max_iter: 500,
                },
            )
            .unwrap();
        sol.l_star.validate(d.probs()).unwrap();
        assert!(sol.residual <= 1e-13);
        let h = &sol.residual_history;
        let w = h.windows(2).map(|r| r[1] / r[0]).fold(0.0, f64::max);
        assert!(w < 1.0, "{w}");
        for (k, r) in h.iter().enumerate() {
            assert!(*r <= w.powi(k as i32) * h[0] * (1.0 + 1e-9) + 1e-15);
        }
    }

    #[test]
    fn small_alpha_reports_contraction_failure() {
        let d = FiniteDistribution::uniform(vec![0.0, 1.0]).unwrap();
        // strongly complementary: the iteration flips between corners
        let cost = CostSpec::new(
            |p: &[f64], _: &[f64]| if p[0] != p[1] { 1.0 } else { 0.0 },
            HorizonSpec::Fixed(2),
        );
        let p = FixedPointProblem::new(&d, &cost).unwrap();
        let start = LikelihoodVector {
            weights: vec![1.2, 0.8],
        };
        match p.solve(0.05, &start, SolveOptions::default()) {
            Err(Error::ContractionFailure { alpha, .. }) => assert_eq!(alpha, 0.05),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn single_variable_calibration_matches_tilt() {
        let d = three();
        let cost = CostSpec::new(|p: &[f64], _: &[f64]| p[0].sin(), HorizonSpec::Single);
        let h = d.map(f64::sin);
        for eta in [1e-4, 1e-3, 1e-2] {
            let fp = calibrate_alpha(&d, &cost, eta, 1e-14).unwrap();
            let exact = solve_tilt(&d, &h, eta, Sense::Max).unwrap();
            assert!(
                (fp.objective - exact.optimum).abs() < 1e-9,
                "{} {}",
                fp.objective,
                exact.optimum
            );
            assert!((fp.beta() - exact.beta_star).abs() < 1e-6 * exact.beta_star);
        }
    }

    #[test]
    fn quadratic_approximation_has_unit_mean() {
        let d = three();
        let p = FixedPointProblem::new(&d, &pair_cost()).unwrap();
        assert!(p.quadratic_approx(0.0).unwrap().iter().all(|v| *v == 1.0));
        for beta in [0.01, 0.3, 2.0] {
            let q = p.quadratic_approx(beta).unwrap();
            assert!((mean_under(d.probs(), &q) - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn fixed_point_beats_random_feasible_probes() {
        use rand::Rng;
        let d = three();
        let p = FixedPointProblem::new(&d, &pair_cost()).unwrap();
        let sol = p.calibrate(1e-3, 1e-14, SolveOptions::default()).unwrap();
        let mut rng = crate::model::stream_rng(9, 0);
        let probs = d.probs();
        let mut probed = 0;
        for _ in 0..100 {
            // random point near L*, pulled onto the KL sphere along the ray from 1
            let raw: Vec<f64> = sol
                .l_star
                .weights
                .iter()
                .map(|l| l * (1.0 + rng.random_range(-0.3..0.3)))
                .collect();
            let m = mean_under(probs, &raw);
            let ray = |c: f64| LikelihoodVector {
                weights: raw.iter().map(|v| 1.0 + c * (v / m - 1.0)).collect(),
            };
            let (mut a, mut b) = (0.0, 1.0);
            while ray(b).kl(probs) < sol.kl {
                b *= 2.0;
            }
            for _ in 0..200 {
                let mid = 0.5 * (a + b);
                if ray(mid).kl(probs) < sol.kl {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            let l = ray(0.5 * (a + b));
            if l.weights.iter().all(|w| *w >= 0.0) {
                probed += 1;
                assert!(p.objective(&l) <= sol.objective + 1e-12);
            }
        }
        assert!(probed > 50);
    }

    #[test]
    fn large_budget_is_a_regime_error() {
        // E_f[h] peaks at the uniform law, KL 0.087 away from the benchmark
        let d = FiniteDistribution::new(vec![0.0, 1.0], vec![0.3, 0.7]).unwrap();
        let cost = CostSpec::new(
            |p: &[f64], _: &[f64]| if p[0] != p[1] { 1.0 } else { 0.0 },
            HorizonSpec::Fixed(2),
        );
        let err = calibrate_alpha(&d, &cost, 0.2, 1e-12).unwrap_err();
        assert!(matches!(err, Error::Regime(_)), "{err:?}");
    }
}
