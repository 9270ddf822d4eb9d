//! Symmetrization of multi-component costs.
//!
//! For a cost `h(X_1..X_T)` of i.i.d. inputs the first-order robust sensitivity
//! is governed by `g(x) = sum_t E[h | X_t = x]` and the second-order one also by
//! the pair function `G(x, y) = sum_t sum_{s != t} E[h | X_t = x, X_s = y]` through
//! the centered moment `nu`. This module computes those objects exactly on
//! enumerable supports and by nested Monte Carlo otherwise; random horizons
//! live in [`random`].

mod cost;
pub mod random;

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use cost::{Cost, CostRecursion, MaxExceed, PathSum, StoppingRule, SumTail, TableCost};
pub use random::{
    g_tilde, g_tilde_exact, pair_tilde_exact, OmegaPmf, RandomizedHorizonConfig, TauLaw, TruncatedPair,
    TruncatedSymmetrization,
};

use crate::error::{Error, Result};
use crate::model::{stream_rng, FiniteDistribution, StochasticModel};

/// Largest product space enumerated exactly.
pub const ENUMERATION_BUDGET: usize = 10_000_000;

#[derive(Clone, Debug)]
pub enum HorizonSpec {
    Single,
    Fixed(usize),
    Random(RandomHorizon),
}

#[derive(Clone, Debug)]
pub enum RandomHorizon {
    /// Stopping time bounded by `t_max`, decided from the cost recursion state.
    Bounded { t_max: usize, rule: StoppingRule },
    /// Time drawn independently of the inputs.
    Independent(TauLaw),
}

impl HorizonSpec {
    /// Horizon length for deterministic horizons.
    pub fn fixed_len(&self) -> Option<usize> {
        match self {
            HorizonSpec::Single => Some(1),
            HorizonSpec::Fixed(t) => Some(*t),
            HorizonSpec::Random(_) => None,
        }
    }
}

/// Auxiliary randomness `Y`, unperturbed, drawn as a path of `len` i.i.d. values.
#[derive(Clone, Debug, PartialEq)]
pub struct Auxiliary {
    pub model: StochasticModel,
    pub len: usize,
}

/// Cost function plus horizon and optional auxiliary source.
#[derive(Clone)]
pub struct CostSpec {
    pub h: Arc<dyn Cost>,
    pub horizon: HorizonSpec,
    pub auxiliary: Option<Auxiliary>,
    /// Caller asserts `h` is invariant under permutations of its arguments.
    pub symmetric: bool,
    /// Caller-supplied bound on `|h|`.
    pub bound: Option<f64>,
}

impl fmt::Debug for CostSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CostSpec")
            .field("horizon", &self.horizon)
            .field("auxiliary", &self.auxiliary)
            .field("symmetric", &self.symmetric)
            .field("bound", &self.bound)
            .finish_non_exhaustive()
    }
}

impl CostSpec {
    pub fn new(h: impl Cost + 'static, horizon: HorizonSpec) -> Self {
        CostSpec {
            h: Arc::new(h),
            horizon,
            auxiliary: None,
            symmetric: false,
            bound: None,
        }
    }

    pub fn with_auxiliary(mut self, model: StochasticModel, len: usize) -> Self {
        self.auxiliary = Some(Auxiliary { model, len });
        self
    }

    pub fn symmetric(mut self) -> Self {
        self.symmetric = true;
        self
    }

    pub fn bounded_by(mut self, bound: f64) -> Self {
        self.bound = Some(bound);
        self
    }

    /// The same cost shifted to `h + c`.
    pub fn shifted(&self, c: f64) -> Self {
        let h = Arc::clone(&self.h);
        let mut out = CostSpec::new(move |p: &[f64], a: &[f64]| h.eval(p, a) + c, self.horizon.clone());
        out.auxiliary = self.auxiliary.clone();
        out.symmetric = self.symmetric;
        out.bound = self.bound.map(|b| b + c.abs());
        out
    }

    /// The negated cost `-h`.
    pub fn negated(&self) -> Self {
        let h = Arc::clone(&self.h);
        let mut out = CostSpec::new(move |p: &[f64], a: &[f64]| -h.eval(p, a), self.horizon.clone());
        out.auxiliary = self.auxiliary.clone();
        out.symmetric = self.symmetric;
        out.bound = self.bound;
        out
    }

    fn fixed_horizon(&self) -> Result<usize> {
        match self.horizon.fixed_len() {
            Some(t) if t >= 1 => Ok(t),
            Some(_) => Err(Error::validation("fixed horizon must be >= 1")),
            None => Err(Error::validation("operation needs a deterministic horizon")),
        }
    }

    pub(crate) fn eval(&self, path: &[f64], aux: &[f64]) -> f64 {
        self.h.eval(path, aux)
    }

    pub(crate) fn draw_aux<R: Rng + ?Sized>(&self, rng: &mut R, buf: &mut Vec<f64>) {
        buf.clear();
        if let Some(aux) = &self.auxiliary {
            buf.resize(aux.len, 0.0);
            aux.model.fill(rng, buf);
        }
    }
}

/// Sum of `h` over the swaps of the first coordinate with every coordinate.
pub fn s_h(cost: &CostSpec, path: &[f64], aux: &[f64]) -> Result<f64> {
    let t = cost.fixed_horizon()?;
    if path.len() != t {
        return Err(Error::validation(format!(
            "path has {} draws, horizon is {t}",
            path.len()
        )));
    }
    Ok(swap_sum(cost, path, aux, &mut path.to_vec()))
}

fn swap_sum(cost: &CostSpec, path: &[f64], aux: &[f64], scratch: &mut Vec<f64>) -> f64 {
    if cost.symmetric {
        return path.len() as f64 * cost.eval(path, aux);
    }
    scratch.clear();
    scratch.extend_from_slice(path);
    let mut total = cost.eval(scratch, aux);
    for t in 1..path.len() {
        scratch.swap(0, t);
        total += cost.eval(scratch, aux);
        scratch.swap(0, t);
    }
    total
}

/// `h` tabulated over the product space of a finite support, with any finite
/// auxiliary source integrated out.
#[derive(Clone, Debug)]
pub struct EnumeratedCost {
    probs: Vec<f64>,
    horizon: usize,
    values: Vec<f64>,
}

impl EnumeratedCost {
    pub fn new(dist: &FiniteDistribution, cost: &CostSpec) -> Result<Self> {
        let horizon = cost.fixed_horizon()?;
        let n = dist.len();
        let states = checked_states(n, horizon)?;
        let (aux_dist, aux_len) = match &cost.auxiliary {
            None => (None, 0),
            Some(a) => match a.model.exact() {
                Some(d) => (Some(d), a.len),
                None => return Err(Error::validation("exact enumeration needs a finite auxiliary model")),
            },
        };
        let aux_states = match aux_dist {
            Some(d) => checked_states(d.len(), aux_len)?,
            None => 1,
        };
        if states.saturating_mul(aux_states) > ENUMERATION_BUDGET {
            return Err(Error::Budget(format!(
                "{states} x {aux_states} enumeration states exceed {ENUMERATION_BUDGET}"
            )));
        }
        let atoms = dist.atoms();
        let mut path = vec![0.0; horizon];
        let mut aux = vec![0.0; aux_len];
        let mut values = Vec::with_capacity(states);
        for index in 0..states {
            decode(index, n, horizon)
                .zip(path.iter_mut())
                .for_each(|(i, x)| *x = atoms[i]);
            let v = match aux_dist {
                None => cost.eval(&path, &aux),
                Some(d) => {
                    let mut acc = 0.0;
                    for a_index in 0..aux_states {
                        let mut w = 1.0;
                        for (i, y) in decode(a_index, d.len(), aux_len).zip(aux.iter_mut()) {
                            *y = d.atoms()[i];
                            w *= d.probs()[i];
                        }
                        if w > 0.0 {
                            acc += w * cost.eval(&path, &aux);
                        }
                    }
                    acc
                }
            };
            values.push(v);
        }
        Ok(EnumeratedCost {
            probs: dist.probs().to_vec(),
            horizon,
            values,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn support_len(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Atom indices of path `index`, coordinate 1 first.
    pub fn path(&self, index: usize) -> impl Iterator<Item = usize> {
        decode(index, self.probs.len(), self.horizon)
    }

    /// `E[prod_t weights(X_t) h]` with per-atom weights, i.e. `E_0[h L(X_1)..L(X_T)]`
    /// when `weights` is a likelihood ratio.
    pub fn weighted_mean(&self, weights: &[f64]) -> f64 {
        let w: Vec<f64> = self.probs.iter().zip(weights).map(|(p, l)| p * l).collect();
        let mut total = 0.0;
        for (index, v) in self.values.iter().enumerate() {
            let mut prod = 1.0;
            for i in self.path(index) {
                prod *= w[i];
            }
            total += v * prod;
        }
        total
    }

    pub fn mean(&self) -> f64 {
        self.weighted_mean(&vec![1.0; self.probs.len()])
    }

    /// `sum_t E[h prod_{r != t} weights(X_r) | X_t = x]` for every atom `x`.
    pub fn conditional_sum(&self, weights: &[f64]) -> Vec<f64> {
        let n = self.probs.len();
        let t_len = self.horizon;
        let w: Vec<f64> = self.probs.iter().zip(weights).map(|(p, l)| p * l).collect();
        let mut out = vec![0.0; n];
        let mut idx = vec![0usize; t_len];
        let mut prefix = vec![1.0; t_len + 1];
        let mut suffix = vec![1.0; t_len + 1];
        for (index, v) in self.values.iter().enumerate() {
            for (slot, i) in idx.iter_mut().zip(self.path(index)) {
                *slot = i;
            }
            for t in 0..t_len {
                prefix[t + 1] = prefix[t] * w[idx[t]];
            }
            for t in (0..t_len).rev() {
                suffix[t] = suffix[t + 1] * w[idx[t]];
            }
            for t in 0..t_len {
                out[idx[t]] += v * prefix[t] * suffix[t + 1];
            }
        }
        out
    }
}

fn checked_states(n: usize, horizon: usize) -> Result<usize> {
    match n.checked_pow(horizon as u32) {
        Some(s) if s <= ENUMERATION_BUDGET => Ok(s),
        _ => Err(Error::Budget(format!(
            "{n}^{horizon} enumeration states exceed {ENUMERATION_BUDGET}"
        ))),
    }
}

fn decode(mut index: usize, n: usize, len: usize) -> impl Iterator<Item = usize> {
    (0..len).map(move |_| {
        let i = index % n;
        index /= n;
        i
    })
}

/// `g(x) = sum_t E[h | X_t = x]` by product-space enumeration, one value per atom.
pub fn g_exact(dist: &FiniteDistribution, cost: &CostSpec) -> Result<Vec<f64>> {
    let table = EnumeratedCost::new(dist, cost)?;
    Ok(table.conditional_sum(&vec![1.0; dist.len()]))
}

/// `E[S_h(X) | X_1 = x]` by enumerating paths and evaluating the swap sum.
///
/// Independent of [`g_exact`]: it calls the cost on swapped paths instead of
/// summing conditional expectations.
pub fn g_exact_swaps(dist: &FiniteDistribution, cost: &CostSpec) -> Result<Vec<f64>> {
    let horizon = cost.fixed_horizon()?;
    if cost.auxiliary.is_some() {
        return Err(Error::validation("swap enumeration does not integrate auxiliary draws"));
    }
    let n = dist.len();
    let rest = checked_states(n, horizon - 1)?;
    let mut out = vec![0.0; n];
    let mut path = vec![0.0; horizon];
    let mut scratch = Vec::with_capacity(horizon);
    for (j, slot) in out.iter_mut().enumerate() {
        path[0] = dist.atoms()[j];
        for index in 0..rest {
            let mut w = 1.0;
            for (t, i) in decode(index, n, horizon - 1).enumerate() {
                path[t + 1] = dist.atoms()[i];
                w *= dist.probs()[i];
            }
            if w > 0.0 {
                *slot += w * swap_sum(cost, &path, &[], &mut scratch);
            }
        }
    }
    Ok(out)
}

/// Which part of the `(t, s)` double sum forms the pair function.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairSum {
    /// All ordered pairs `s != t`.
    Full,
    /// `2 * sum_{s < t}`.
    TwiceLower,
}

/// `g`, the pair function `G` and `nu` for a deterministic horizon.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PairSymmetrization {
    pub g: Vec<f64>,
    /// `pair[x][y] = G(atoms[x], atoms[y])`.
    pub pair: Vec<Vec<f64>>,
    pub nu: f64,
}

pub fn pair_nu_exact(dist: &FiniteDistribution, cost: &CostSpec) -> Result<PairSymmetrization> {
    pair_nu_exact_with(dist, cost, PairSum::Full)
}

pub fn pair_nu_exact_with(dist: &FiniteDistribution, cost: &CostSpec, form: PairSum) -> Result<PairSymmetrization> {
    let table = EnumeratedCost::new(dist, cost)?;
    let g = table.conditional_sum(&vec![1.0; dist.len()]);
    let pair = pair_table(&table, form);
    let nu = centered_triple(dist.probs(), &pair, &g);
    Ok(PairSymmetrization { g, pair, nu })
}

pub(crate) fn pair_table(table: &EnumeratedCost, form: PairSum) -> Vec<Vec<f64>> {
    let n = table.support_len();
    let t_len = table.horizon();
    let p = table.probs();
    let mut pair = vec![vec![0.0; n]; n];
    let mut idx = vec![0usize; t_len];
    for (index, v) in table.values().iter().enumerate() {
        for (slot, i) in idx.iter_mut().zip(table.path(index)) {
            *slot = i;
        }
        for t in 0..t_len {
            for s in 0..t_len {
                let counted = match form {
                    PairSum::Full => s != t,
                    PairSum::TwiceLower => s < t,
                };
                if !counted {
                    continue;
                }
                let mut w = 1.0;
                for (r, &i) in idx.iter().enumerate() {
                    if r != t && r != s {
                        w *= p[i];
                    }
                }
                let scale = if form == PairSum::TwiceLower { 2.0 } else { 1.0 };
                pair[idx[t]][idx[s]] += scale * v * w;
            }
        }
    }
    pair
}

/// `E[(G(X,Y) - E G)(g(X) - E g)(g(Y) - E g)]` for independent `X, Y ~ probs`.
pub fn centered_triple(probs: &[f64], pair: &[Vec<f64>], g: &[f64]) -> f64 {
    let gm: f64 = probs.iter().zip(g).map(|(p, v)| p * v).sum();
    let mut pm = 0.0;
    for (x, px) in probs.iter().enumerate() {
        for (y, py) in probs.iter().enumerate() {
            pm += px * py * pair[x][y];
        }
    }
    let mut nu = 0.0;
    for (x, px) in probs.iter().enumerate() {
        for (y, py) in probs.iter().enumerate() {
            nu += px * py * (pair[x][y] - pm) * (g[x] - gm) * (g[y] - gm);
        }
    }
    nu
}

/// Sample mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub se: f64,
    pub samples: usize,
}

impl McEstimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let se = if n > 1 {
            let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        McEstimate { mean, se, samples: n }
    }
}

/// One draw of `H` given `X = x` whose conditional mean is the symmetrization at `x`:
/// `h(x, Y)` for a single input, `S_h` with `x` in coordinate 1 for a fixed
/// horizon, and the randomized-horizon estimator for a random horizon.
pub fn conditional_sample<R: Rng + ?Sized>(
    model: &StochasticModel,
    cost: &CostSpec,
    config: &RandomizedHorizonConfig,
    x: f64,
    rng: &mut R,
) -> Result<f64> {
    let mut aux = Vec::new();
    match &cost.horizon {
        HorizonSpec::Single => {
            cost.draw_aux(rng, &mut aux);
            Ok(cost.eval(&[x], &aux))
        }
        HorizonSpec::Fixed(t) => {
            let mut path = vec![0.0; *t];
            path[0] = x;
            model.fill(rng, &mut path[1..]);
            cost.draw_aux(rng, &mut aux);
            let mut scratch = Vec::with_capacity(*t);
            Ok(swap_sum(cost, &path, &aux, &mut scratch))
        }
        HorizonSpec::Random(_) => random::randomized_sample(model, cost, config, x, rng),
    }
}

/// One unconditional draw of the cost under the benchmark model.
pub fn sample_cost<R: Rng + ?Sized>(model: &StochasticModel, cost: &CostSpec, rng: &mut R) -> Result<f64> {
    let mut aux = Vec::new();
    match &cost.horizon {
        HorizonSpec::Random(_) => random::unconditional_sample(model, cost, rng),
        fixed => {
            let t = fixed.fixed_len().expect("deterministic");
            let mut path = vec![0.0; t];
            model.fill(rng, &mut path);
            cost.draw_aux(rng, &mut aux);
            Ok(cost.eval(&path, &aux))
        }
    }
}

/// Nested Monte Carlo estimate of `g(x)` for a deterministic horizon.
pub fn g_nested_mc(
    model: &StochasticModel,
    cost: &CostSpec,
    x: f64,
    budget: usize,
    seed: u64,
    stream: u64,
) -> Result<McEstimate> {
    cost.fixed_horizon()?;
    if budget == 0 {
        return Err(Error::validation("nested Monte Carlo budget must be positive"));
    }
    let mut rng = stream_rng(seed, stream);
    let config = RandomizedHorizonConfig::default();
    let samples = (0..budget)
        .map(|_| conditional_sample(model, cost, &config, x, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(McEstimate::from_samples(&samples))
}
