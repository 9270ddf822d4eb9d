//! Random time horizons.
//!
//! `g~(x) = sum_t E[h(X_tau); tau >= t | X_t = x]` is estimated by randomizing
//! the insertion time: draw `R = w`, simulate the path with `X_w = x`, and
//! return `h / p_w` when `tau >= w` (zero otherwise). On finite supports the
//! sums are evaluated exactly by a forward/backward pass over the cost
//! recursion state, truncated at `T_cut` with a certified tail bound.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};

use super::{centered_triple, CostSpec, HorizonSpec, McEstimate, RandomHorizon};
use crate::error::{Error, Result};
use crate::model::{stream_rng, validate_probs, FiniteDistribution, StochasticModel};
use crate::symmetrize::CostRecursion;

/// Largest truncation searched when `T_cut` is chosen automatically.
pub const MAX_T_CUT: usize = 100_000;
/// Largest number of recursion states kept at one time step.
pub const MAX_STATES: usize = 1_000_000;

/// Law of a horizon drawn independently of the inputs, on `{1, 2, ...}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum TauLaw {
    /// `pmf[k] = P(tau = k + 1)`.
    Pmf(Vec<f64>),
    /// `P(tau = t) = success (1 - success)^(t - 1)`.
    Geometric { success: f64 },
}

impl TauLaw {
    pub fn deterministic(t: usize) -> Result<Self> {
        if t == 0 {
            return Err(Error::validation("horizon must be >= 1"));
        }
        let mut pmf = vec![0.0; t];
        pmf[t - 1] = 1.0;
        Ok(TauLaw::Pmf(pmf))
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TauLaw::Pmf(p) => {
                if p.is_empty() {
                    return Err(Error::validation("tau pmf is empty"));
                }
                validate_probs(p).map(|_| ())
            }
            TauLaw::Geometric { success } => {
                if success.is_finite() && *success > 0.0 && *success <= 1.0 {
                    Ok(())
                } else {
                    Err(Error::validation(format!("geometric success {success} not in (0, 1]")))
                }
            }
        }
    }

    pub fn pmf(&self, t: usize) -> f64 {
        match self {
            TauLaw::Pmf(p) => t.checked_sub(1).and_then(|k| p.get(k)).copied().unwrap_or(0.0),
            TauLaw::Geometric { success } if t >= 1 => success * (1.0 - success).powi(t as i32 - 1),
            TauLaw::Geometric { .. } => 0.0,
        }
    }

    /// `P(tau >= t)`.
    pub fn survival(&self, t: usize) -> f64 {
        match self {
            TauLaw::Pmf(p) => {
                let start = t.saturating_sub(1).min(p.len());
                p[start..].iter().sum()
            }
            TauLaw::Geometric { success } => (1.0 - success).powi(t.saturating_sub(1) as i32),
        }
    }

    /// Largest value with positive mass, if finite.
    pub fn max_support(&self) -> Option<usize> {
        match self {
            TauLaw::Pmf(p) => p.iter().rposition(|&q| q > 0.0).map(|k| k + 1),
            TauLaw::Geometric { success } if *success >= 1.0 => Some(1),
            TauLaw::Geometric { .. } => None,
        }
    }

    /// `E[tau; tau > t]`.
    pub fn tail_first(&self, t: usize) -> f64 {
        match self {
            TauLaw::Pmf(p) => p.iter().enumerate().skip(t).map(|(k, q)| (k + 1) as f64 * q).sum(),
            TauLaw::Geometric { success: q } => {
                let t = t as f64;
                (1.0 - q).powf(t) * (t + 1.0 / q)
            }
        }
    }

    /// `E[tau (tau - 1); tau > t]`.
    pub fn tail_second(&self, t: usize) -> f64 {
        match self {
            TauLaw::Pmf(p) => p
                .iter()
                .enumerate()
                .skip(t)
                .map(|(k, q)| ((k + 1) * k) as f64 * q)
                .sum(),
            TauLaw::Geometric { success: q } => {
                let t = t as f64;
                (1.0 - q).powf(t) * (t * t - t + (2.0 * t - 1.0) / q + (2.0 - q) / (q * q))
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match self {
            TauLaw::Pmf(p) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (k, q) in p.iter().enumerate() {
                    acc += q;
                    if u < acc {
                        return k + 1;
                    }
                }
                self.max_support().unwrap_or(p.len())
            }
            TauLaw::Geometric { success } => geometric_draw(*success, rng),
        }
    }
}

fn geometric_draw<R: Rng + ?Sized>(success: f64, rng: &mut R) -> usize {
    if success >= 1.0 {
        return 1;
    }
    // rand_distr counts failures before the first success
    let failures = Geometric::new(success).expect("validated success").sample(rng);
    usize::try_from(failures).unwrap_or(usize::MAX - 1) + 1
}

/// Law of the auxiliary insertion time `R`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum OmegaPmf {
    Geometric {
        success: f64,
    },
    /// `explicit[k] = p_(k + 1)`.
    Explicit(Vec<f64>),
}

impl OmegaPmf {
    pub fn validate(&self) -> Result<()> {
        match self {
            OmegaPmf::Geometric { success } => TauLaw::Geometric { success: *success }.validate(),
            OmegaPmf::Explicit(p) => TauLaw::Pmf(p.clone()).validate(),
        }
    }

    pub fn pmf(&self, w: usize) -> f64 {
        match self {
            OmegaPmf::Geometric { success } => TauLaw::Geometric { success: *success }.pmf(w),
            OmegaPmf::Explicit(p) => w.checked_sub(1).and_then(|k| p.get(k)).copied().unwrap_or(0.0),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match self {
            OmegaPmf::Geometric { success } => geometric_draw(*success, rng),
            OmegaPmf::Explicit(p) => TauLaw::Pmf(p.clone()).sample(rng),
        }
    }

    /// First `w <= horizon_max` (or any `w` for unbounded horizons) with
    /// `p_w = 0` while the horizon can still reach `w`.
    fn support_gap(&self, reach: impl Fn(usize) -> f64, horizon_max: Option<usize>) -> Option<(usize, f64)> {
        let OmegaPmf::Explicit(p) = self else {
            return None;
        };
        let last = horizon_max.unwrap_or(p.len() + 1);
        (1..=last)
            .filter(|&w| self.pmf(w) <= 0.0)
            .map(|w| (w, reach(w)))
            .find(|&(_, mass)| mass > 0.0)
    }
}

/// Randomized-horizon settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomizedHorizonConfig {
    pub pmf: OmegaPmf,
    /// Fixed truncation for exact evaluation; chosen from `tolerance` when absent.
    pub t_cut: Option<usize>,
    pub tolerance: f64,
}

impl Default for RandomizedHorizonConfig {
    fn default() -> Self {
        RandomizedHorizonConfig {
            pmf: OmegaPmf::Geometric { success: 0.2 },
            t_cut: None,
            tolerance: 1e-10,
        }
    }
}

fn random_horizon(cost: &CostSpec) -> Result<&RandomHorizon> {
    match &cost.horizon {
        HorizonSpec::Random(r) => Ok(r),
        _ => Err(Error::validation("operation needs a random horizon")),
    }
}

fn check_random(cost: &CostSpec) -> Result<&RandomHorizon> {
    let r = random_horizon(cost)?;
    match r {
        RandomHorizon::Bounded { t_max, .. } => {
            if *t_max == 0 {
                return Err(Error::validation("t_max must be >= 1"));
            }
            if cost.h.recursion().is_none() {
                return Err(Error::validation(
                    "a state-based stopping rule needs a cost with a recursion",
                ));
            }
        }
        RandomHorizon::Independent(law) => {
            law.validate()?;
            match cost.bound {
                Some(b) if b.is_finite() => {}
                _ => {
                    return Err(Error::validation(
                        "an independent random horizon needs a cost with a declared finite bound",
                    ))
                }
            }
        }
    }
    Ok(r)
}

fn check_pmf(r: &RandomHorizon, pmf: &OmegaPmf) -> Result<()> {
    pmf.validate()?;
    let gap = match r {
        RandomHorizon::Bounded { t_max, .. } => pmf.support_gap(|_| 1.0, Some(*t_max)),
        RandomHorizon::Independent(law) => pmf.support_gap(|w| law.survival(w), law.max_support()),
    };
    match gap {
        Some((omega, mass)) => Err(Error::Bias { omega, mass }),
        None => Ok(()),
    }
}

/// One draw of the randomized-horizon estimator at `x`.
pub(crate) fn randomized_sample<R: Rng + ?Sized>(
    model: &StochasticModel,
    cost: &CostSpec,
    config: &RandomizedHorizonConfig,
    x: f64,
    rng: &mut R,
) -> Result<f64> {
    let r = check_random(cost)?;
    check_pmf(r, &config.pmf)?;
    Ok(draw(
        model,
        cost,
        r,
        &config.pmf,
        x,
        rng,
        &mut Vec::new(),
        &mut Vec::new(),
    ))
}

#[allow(clippy::too_many_arguments)]
fn draw<R: Rng + ?Sized>(
    model: &StochasticModel,
    cost: &CostSpec,
    r: &RandomHorizon,
    pmf: &OmegaPmf,
    x: f64,
    rng: &mut R,
    path: &mut Vec<f64>,
    aux: &mut Vec<f64>,
) -> f64 {
    let omega = pmf.sample(rng);
    let p_omega = pmf.pmf(omega);
    path.clear();
    let tau = match r {
        RandomHorizon::Independent(law) => {
            let tau = law.sample(rng);
            if tau < omega {
                return 0.0;
            }
            for t in 1..=tau {
                path.push(if t == omega { x } else { model.sample(rng) });
            }
            tau
        }
        RandomHorizon::Bounded { t_max, rule } => {
            let rec = cost.h.recursion().expect("checked");
            let mut state = rec.initial();
            let mut t = 0;
            loop {
                t += 1;
                let xt = if t == omega { x } else { model.sample(rng) };
                path.push(xt);
                state = rec.step(state, xt);
                if t >= *t_max || rule.stops(t, state) {
                    break t;
                }
            }
        }
    };
    if tau < omega {
        return 0.0;
    }
    cost.draw_aux(rng, aux);
    cost.eval(path, aux) / p_omega
}

/// One unconditional draw of `h(X_1..X_tau)`.
pub(crate) fn unconditional_sample<R: Rng + ?Sized>(
    model: &StochasticModel,
    cost: &CostSpec,
    rng: &mut R,
) -> Result<f64> {
    let r = check_random(cost)?;
    let mut path = Vec::new();
    match r {
        RandomHorizon::Independent(law) => {
            let tau = law.sample(rng);
            path.resize(tau, 0.0);
            model.fill(rng, &mut path);
        }
        RandomHorizon::Bounded { t_max, rule } => {
            let rec = cost.h.recursion().expect("checked");
            let mut state = rec.initial();
            for t in 1..=*t_max {
                let xt = model.sample(rng);
                path.push(xt);
                state = rec.step(state, xt);
                if rule.stops(t, state) {
                    break;
                }
            }
        }
    }
    let mut aux = Vec::new();
    cost.draw_aux(rng, &mut aux);
    Ok(cost.eval(&path, &aux))
}

/// Randomized-horizon Monte Carlo estimate of `g~(x)` from `budget` draws.
pub fn g_tilde(
    model: &StochasticModel,
    cost: &CostSpec,
    config: &RandomizedHorizonConfig,
    x: f64,
    budget: usize,
    seed: u64,
    stream: u64,
) -> Result<McEstimate> {
    let r = check_random(cost)?;
    check_pmf(r, &config.pmf)?;
    model.validate()?;
    if budget == 0 {
        return Err(Error::validation("Monte Carlo budget must be positive"));
    }
    let mut rng = stream_rng(seed, stream);
    let (mut path, mut aux) = (Vec::new(), Vec::new());
    let samples: Vec<f64> = (0..budget)
        .map(|_| draw(model, cost, r, &config.pmf, x, &mut rng, &mut path, &mut aux))
        .collect();
    Ok(McEstimate::from_samples(&samples))
}

/// Exact `g~` on a finite support, truncated at `t_cut`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncatedSymmetrization {
    pub g: Vec<f64>,
    /// `E_0[h(X_tau)]` under the same truncation.
    pub mean: f64,
    pub t_cut: usize,
    /// Pointwise bound on the truncation error of `g` (and of `mean`).
    pub tail_bound: f64,
}

/// Exact `g~`, the reduced pair function and `nu~` on a finite support.
///
/// `pair[x][y] = sum_t sum_{s != t} E[h(X_tau); tau >= max(t, s) | X_t = x, X_s = y]`.
/// It differs from the pair sum with `tau >= min(t, s)` by functions of one
/// argument only, which the centered triple product annihilates, and it stays
/// finite when `tau` is unbounded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncatedPair {
    pub g: Vec<f64>,
    pub mean: f64,
    pub pair: Vec<Vec<f64>>,
    pub nu: f64,
    pub t_cut: usize,
    pub g_bound: f64,
    pub pair_bound: f64,
    /// Bound on `|nu - nu_truncated|` implied by the two bounds above.
    pub nu_bound: f64,
}

type States = BTreeMap<u64, f64>;

fn key(s: f64) -> u64 {
    if s == 0.0 {
        0.0f64.to_bits()
    } else {
        s.to_bits()
    }
}

struct Pass<'a> {
    rec: &'a dyn CostRecursion,
    atoms: &'a [f64],
    probs: &'a [f64],
    horizon: &'a RandomHorizon,
    t_cut: usize,
    /// `alive[t]`: sub-distribution of the state after step `t` on `{tau > t}`.
    alive: Vec<States>,
    /// `value[t]` for `t >= 1`: `E[h(X_tau) | tau >= t, state_t]` truncated at `t_cut`.
    value: Vec<States>,
}

impl<'a> Pass<'a> {
    fn hazard(&self, t: usize, state: f64) -> f64 {
        match self.horizon {
            RandomHorizon::Bounded { t_max, rule } => {
                if t >= *t_max || rule.stops(t, state) {
                    1.0
                } else {
                    0.0
                }
            }
            RandomHorizon::Independent(law) => {
                let surv = law.survival(t);
                if surv <= 0.0 {
                    1.0
                } else {
                    (law.pmf(t) / surv).min(1.0)
                }
            }
        }
    }

    fn run(
        rec: &'a dyn CostRecursion,
        dist: &'a FiniteDistribution,
        horizon: &'a RandomHorizon,
        t_cut: usize,
    ) -> Result<Self> {
        let mut pass = Pass {
            rec,
            atoms: dist.atoms(),
            probs: dist.probs(),
            horizon,
            t_cut,
            alive: Vec::with_capacity(t_cut + 1),
            value: Vec::new(),
        };
        let mut start = States::new();
        start.insert(key(rec.initial()), 1.0);
        pass.alive.push(start);
        // states reachable at step t, keyed with state value
        let mut reach: Vec<BTreeMap<u64, f64>> = vec![BTreeMap::new()];
        for t in 1..=t_cut {
            let mut r_t = BTreeMap::new();
            let mut next = States::new();
            for (&a, &mass) in &pass.alive[t - 1] {
                let state = f64::from_bits(a);
                for (&x, &p) in pass.atoms.iter().zip(pass.probs) {
                    let s = rec.step(state, x);
                    let k = key(s);
                    r_t.insert(k, s);
                    let cont = 1.0 - pass.hazard(t, s);
                    if cont > 0.0 {
                        *next.entry(k).or_insert(0.0) += mass * p * cont;
                    }
                }
            }
            if r_t.len() > MAX_STATES {
                return Err(Error::Budget(format!(
                    "{} recursion states at step {t} exceed {MAX_STATES}",
                    r_t.len()
                )));
            }
            reach.push(r_t);
            pass.alive.push(next);
        }
        let mut value = vec![States::new(); t_cut + 2];
        for t in (1..=t_cut).rev() {
            let mut u = States::new();
            for (&k, &s) in &reach[t] {
                let pi = pass.hazard(t, s);
                let mut v = pi * rec.value(s);
                if pi < 1.0 && t < t_cut {
                    let cont: f64 = pass
                        .atoms
                        .iter()
                        .zip(pass.probs)
                        .map(|(&x, &p)| p * value[t + 1][&key(rec.step(s, x))])
                        .sum();
                    v += (1.0 - pi) * cont;
                }
                u.insert(k, v);
            }
            value[t] = u;
        }
        pass.value = value;
        Ok(pass)
    }

    fn g(&self) -> Vec<f64> {
        let mut g = vec![0.0; self.atoms.len()];
        for t in 1..=self.t_cut {
            for (&a, &mass) in &self.alive[t - 1] {
                let state = f64::from_bits(a);
                for (slot, &x) in g.iter_mut().zip(self.atoms) {
                    *slot += mass * self.value[t][&key(self.rec.step(state, x))];
                }
            }
        }
        g
    }

    fn mean(&self) -> f64 {
        let init = self.rec.initial();
        self.atoms
            .iter()
            .zip(self.probs)
            .map(|(&x, &p)| p * self.value[1][&key(self.rec.step(init, x))])
            .sum()
    }

    /// `m[x][y] = sum_{s < t} E[h; tau >= t | X_s = x, X_t = y]`.
    fn ordered_pair(&self) -> Vec<Vec<f64>> {
        let n = self.atoms.len();
        let mut m = vec![vec![0.0; n]; n];
        for (xi, &x) in self.atoms.iter().enumerate() {
            // inserted[state] after step t, on {tau > t}, summed over insertion times s <= t
            let mut inserted = States::new();
            for t in 1..=self.t_cut {
                if t >= 2 {
                    for (&a, &mass) in &inserted {
                        let state = f64::from_bits(a);
                        for (yi, &y) in self.atoms.iter().enumerate() {
                            m[xi][yi] += mass * self.value[t][&key(self.rec.step(state, y))];
                        }
                    }
                }
                let mut next = States::new();
                for (&a, &mass) in &inserted {
                    let state = f64::from_bits(a);
                    for (&z, &p) in self.atoms.iter().zip(self.probs) {
                        let s = self.rec.step(state, z);
                        let cont = 1.0 - self.hazard(t, s);
                        if cont > 0.0 {
                            *next.entry(key(s)).or_insert(0.0) += mass * p * cont;
                        }
                    }
                }
                for (&a, &mass) in &self.alive[t - 1] {
                    let s = self.rec.step(f64::from_bits(a), x);
                    let cont = 1.0 - self.hazard(t, s);
                    if cont > 0.0 {
                        *next.entry(key(s)).or_insert(0.0) += mass * cont;
                    }
                }
                inserted = next;
            }
        }
        m
    }
}

struct Cut {
    t_cut: usize,
    g_bound: f64,
    pair_bound: f64,
}

fn choose_cut(cost: &CostSpec, r: &RandomHorizon, config: &RandomizedHorizonConfig, pair: bool) -> Result<Cut> {
    match r {
        RandomHorizon::Bounded { t_max, .. } => Ok(Cut {
            t_cut: config.t_cut.map_or(*t_max, |c| c.min(*t_max)).max(1),
            g_bound: 0.0,
            pair_bound: 0.0,
        })
        .and_then(|cut| {
            if cut.t_cut < *t_max {
                Err(Error::validation(format!(
                    "t_cut {} below the stopping bound {t_max}",
                    cut.t_cut
                )))
            } else {
                Ok(cut)
            }
        }),
        RandomHorizon::Independent(law) => {
            let c = cost.bound.expect("checked").abs();
            let bounds = |t: usize| (c * law.tail_first(t), c * law.tail_second(t));
            let within = |t: usize| {
                let (gb, pb) = bounds(t);
                gb <= config.tolerance && (!pair || pb <= config.tolerance)
            };
            let t_cut = match config.t_cut {
                Some(0) => return Err(Error::validation("t_cut must be >= 1")),
                Some(t) => {
                    if !within(t) {
                        let (gb, pb) = bounds(t);
                        return Err(Error::Budget(format!(
                            "truncation at {t} leaves tail bound {:e} above tolerance {:e}",
                            if pair { gb.max(pb) } else { gb },
                            config.tolerance
                        )));
                    }
                    t
                }
                None => {
                    let cap = law.max_support().unwrap_or(MAX_T_CUT);
                    (1..=cap).find(|&t| within(t)).ok_or_else(|| {
                        Error::Budget(format!(
                            "no truncation up to {cap} meets tolerance {:e}",
                            config.tolerance
                        ))
                    })?
                }
            };
            let (g_bound, pair_bound) = bounds(t_cut);
            Ok(Cut {
                t_cut,
                g_bound,
                pair_bound,
            })
        }
    }
}

fn prepare<'a>(cost: &'a CostSpec, dist: &FiniteDistribution) -> Result<(&'a RandomHorizon, &'a dyn CostRecursion)> {
    if dist.is_empty() {
        return Err(Error::validation("empty support"));
    }
    let r = check_random(cost)?;
    if cost.auxiliary.is_some() {
        return Err(Error::validation(
            "exact random-horizon evaluation does not integrate auxiliary draws",
        ));
    }
    let rec = cost
        .h
        .recursion()
        .ok_or_else(|| Error::validation("exact random-horizon evaluation needs a cost with a recursion"))?;
    Ok((r, rec))
}

/// Exact truncated `g~(x)` for every atom.
pub fn g_tilde_exact(
    dist: &FiniteDistribution,
    cost: &CostSpec,
    config: &RandomizedHorizonConfig,
) -> Result<TruncatedSymmetrization> {
    let (r, rec) = prepare(cost, dist)?;
    let cut = choose_cut(cost, r, config, false)?;
    let pass = Pass::run(rec, dist, r, cut.t_cut)?;
    Ok(TruncatedSymmetrization {
        g: pass.g(),
        mean: pass.mean(),
        t_cut: cut.t_cut,
        tail_bound: cut.g_bound,
    })
}

/// Exact truncated `g~`, reduced pair function and `nu~`.
pub fn pair_tilde_exact(
    dist: &FiniteDistribution,
    cost: &CostSpec,
    config: &RandomizedHorizonConfig,
) -> Result<TruncatedPair> {
    let (r, rec) = prepare(cost, dist)?;
    let cut = choose_cut(cost, r, config, true)?;
    let pass = Pass::run(rec, dist, r, cut.t_cut)?;
    let g = pass.g();
    let m = pass.ordered_pair();
    let n = g.len();
    let pair: Vec<Vec<f64>> = (0..n).map(|x| (0..n).map(|y| m[x][y] + m[y][x]).collect()).collect();
    let probs = dist.probs();
    let nu = centered_triple(probs, &pair, &g);

    let gm = dist.expect(&g);
    let pm: f64 = (0..n)
        .flat_map(|x| (0..n).map(move |y| (x, y)))
        .map(|(x, y)| probs[x] * probs[y] * pair[x][y])
        .sum();
    let abs_dev = dist.expect(&g.iter().map(|v| (v - gm).abs()).collect::<Vec<_>>());
    let sup_g = g.iter().map(|v| (v - gm).abs()).fold(0.0, f64::max);
    let sup_pair = pair.iter().flatten().map(|v| (v - pm).abs()).fold(0.0, f64::max);
    let (eg, ep) = (2.0 * cut.g_bound, 2.0 * cut.pair_bound);
    let nu_bound = ep * (abs_dev + eg).powi(2) + 2.0 * sup_pair * eg * (sup_g + eg);
    Ok(TruncatedPair {
        g,
        mean: pass.mean(),
        pair,
        nu,
        t_cut: cut.t_cut,
        g_bound: cut.g_bound,
        pair_bound: cut.pair_bound,
        nu_bound,
    })
}
