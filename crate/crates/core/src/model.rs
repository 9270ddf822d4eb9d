//! Benchmark input models.
//!
//! A benchmark model is either an exactly known [`FiniteDistribution`] (used by
//! every enumeration-based computation) or a black-box [`StochasticModel`]
//! sampler. All Monte Carlo code draws from [`stream_rng`], which derives an
//! independent ChaCha keystream from a `(seed, stream)` pair so that results
//! do not depend on how replications are scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma, Normal, Uniform};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as NormalCdf};

use crate::error::{Error, Result};

/// Absolute tolerance on `sum(probs) == 1`. Inputs within it are renormalized.
pub const PROB_TOL: f64 = 1e-12;

/// RNG used for every seeded stream.
pub type StreamRng = ChaCha8Rng;

/// Seeded generator for stream `stream` under base seed `seed`.
///
/// The base seed keys the ChaCha block function (expanded through
/// `seed_from_u64`) and the stream index selects the 64-bit ChaCha stream
/// word, so every `(seed, stream)` pair owns a disjoint keystream and draw
/// `k` of a stream is fixed regardless of what other streams do.
pub fn stream_rng(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Packs a purpose tag and an index into one stream id, keeping the streams of
/// unrelated computations (benchmark replications, nested sections, ...) apart.
pub fn stream_id(purpose: u16, index: u64) -> u64 {
    debug_assert!(index < 1 << 48);
    ((purpose as u64) << 48) | index
}

pub(crate) fn validate_probs(probs: &[f64]) -> Result<Vec<f64>> {
    if probs.is_empty() {
        return Err(Error::validation("probability vector is empty"));
    }
    for (i, &p) in probs.iter().enumerate() {
        if !p.is_finite() || p < 0.0 {
            return Err(Error::validation(format!("probability {i} is {p}")));
        }
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > PROB_TOL {
        return Err(Error::validation(format!("probabilities sum to {total:.15}, not 1")));
    }
    Ok(probs.iter().map(|p| p / total).collect())
}

/// Atoms with probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFinite", into = "RawFinite")]
pub struct FiniteDistribution {
    atoms: Vec<f64>,
    probs: Vec<f64>,
    cdf: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFinite {
    atoms: Vec<f64>,
    probs: Vec<f64>,
}

impl TryFrom<RawFinite> for FiniteDistribution {
    type Error = Error;
    fn try_from(raw: RawFinite) -> Result<Self> {
        FiniteDistribution::new(raw.atoms, raw.probs)
    }
}

impl From<FiniteDistribution> for RawFinite {
    fn from(d: FiniteDistribution) -> Self {
        RawFinite {
            atoms: d.atoms,
            probs: d.probs,
        }
    }
}

impl FiniteDistribution {
    pub fn new(atoms: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if atoms.len() != probs.len() {
            return Err(Error::validation(format!(
                "{} atoms but {} probabilities",
                atoms.len(),
                probs.len()
            )));
        }
        let probs = validate_probs(&probs)?;
        if let Some(a) = atoms.iter().find(|a| !a.is_finite()) {
            return Err(Error::validation(format!("atom {a} is not finite")));
        }
        let mut sorted = atoms.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::validation("atoms must be pairwise distinct"));
        }
        let mut acc = 0.0;
        let cdf = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(FiniteDistribution { atoms, probs, cdf })
    }

    /// Normalizes nonnegative weights of any total mass.
    pub fn from_weights(atoms: Vec<f64>, weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::validation("weights must be nonnegative with positive total"));
        }
        Self::new(atoms, weights.iter().map(|w| w / total).collect())
    }

    pub fn uniform(atoms: Vec<f64>) -> Result<Self> {
        let n = atoms.len().max(1);
        Self::new(atoms, vec![1.0 / n as f64; n])
    }

    pub fn point(value: f64) -> Result<Self> {
        Self::new(vec![value], vec![1.0])
    }

    /// Discretization of `N(mean, sd^2)` on `atoms` evenly spaced points over
    /// `mean +- clip * sd`; each atom carries the normal mass of its cell, the
    /// two end cells absorbing the tails.
    pub fn discretized_normal(mean: f64, sd: f64, atoms: usize, clip: f64) -> Result<Self> {
        if !(sd > 0.0) || atoms < 2 || !(clip > 0.0) {
            return Err(Error::validation(
                "discretized_normal needs sd > 0, atoms >= 2, clip > 0",
            ));
        }
        let std = NormalCdf::new(0.0, 1.0).expect("standard normal");
        let width = 2.0 * clip / (atoms - 1) as f64;
        let z: Vec<f64> = (0..atoms).map(|i| -clip + width * i as f64).collect();
        let edge = |i: usize| -> f64 {
            if i == 0 {
                0.0
            } else if i == atoms {
                1.0
            } else {
                std.cdf(z[i - 1] + 0.5 * width)
            }
        };
        let probs: Vec<f64> = (0..atoms).map(|i| edge(i + 1) - edge(i)).collect();
        let values = z.iter().map(|z| mean + sd * z).collect();
        Self::from_weights(values, &probs)
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Same atoms, new probabilities.
    pub fn with_probs(&self, probs: Vec<f64>) -> Result<Self> {
        Self::new(self.atoms.clone(), probs)
    }

    pub fn index_of(&self, x: f64) -> Option<usize> {
        self.atoms.iter().position(|&a| a == x)
    }

    /// Evaluates `f` on every atom.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.atoms.iter().map(|&a| f(a)).collect()
    }

    /// `sum_i probs[i] * values[i]`.
    pub fn expect(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.len());
        self.probs.iter().zip(values).map(|(p, v)| p * v).sum()
    }

    pub fn mean(&self) -> f64 {
        self.expect(&self.atoms)
    }

    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        self.cdf.partition_point(|&c| c <= u).min(self.len() - 1)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.atoms[self.sample_index(rng)]
    }
}

/// Mean, variance and third cumulant of a finitely supported variable.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CumulantTriple {
    pub mean: f64,
    pub variance: f64,
    pub kappa3: f64,
}

pub fn cumulants(values: &[f64], weights: &[f64]) -> Result<CumulantTriple> {
    if values.is_empty() {
        return Err(Error::validation("cumulants of an empty sample"));
    }
    if values.len() != weights.len() {
        return Err(Error::validation("values and weights differ in length"));
    }
    let weights = validate_probs(weights)?;
    let mean: f64 = values.iter().zip(&weights).map(|(v, w)| v * w).sum();
    let (mut variance, mut kappa3) = (0.0, 0.0);
    for (v, w) in values.iter().zip(&weights) {
        let d = v - mean;
        variance += w * d * d;
        kappa3 += w * d * d * d;
    }
    Ok(CumulantTriple {
        mean,
        variance: variance.max(0.0),
        kappa3,
    })
}

/// `D(p || q) = sum p_i log(p_i / q_i)` over a shared atom list.
pub fn kl_divergence(p: &FiniteDistribution, q: &FiniteDistribution) -> Result<f64> {
    if p.atoms != q.atoms {
        return Err(Error::AbsoluteContinuity(
            "distributions are defined on different atom lists".into(),
        ));
    }
    let mut kl = 0.0;
    for (i, (&pi, &qi)) in p.probs.iter().zip(&q.probs).enumerate() {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(Error::AbsoluteContinuity(format!("atom {i} has p = {pi:e} but q = 0")));
        }
        kl += pi * (pi / qi).ln();
    }
    Ok(kl.max(0.0))
}

/// Seedable black-box sampler for an i.i.d. input component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "lowercase", deny_unknown_fields)]
pub enum StochasticModel {
    Finite(FiniteDistribution),
    Exponential { rate: f64 },
    Gamma { shape: f64, rate: f64 },
    Uniform { low: f64, high: f64 },
    Normal { mean: f64, sd: f64 },
}

impl StochasticModel {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            StochasticModel::Finite(_) => true,
            StochasticModel::Exponential { rate } => rate > 0.0 && rate.is_finite(),
            StochasticModel::Gamma { shape, rate } => {
                shape > 0.0 && rate > 0.0 && shape.is_finite() && rate.is_finite()
            }
            StochasticModel::Uniform { low, high } => low.is_finite() && high.is_finite() && low < high,
            StochasticModel::Normal { mean, sd } => mean.is_finite() && sd.is_finite() && sd >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::validation(format!("invalid sampler parameters: {self:?}")))
        }
    }

    /// The exact distribution, when the model is enumerable.
    pub fn exact(&self) -> Option<&FiniteDistribution> {
        match self {
            StochasticModel::Finite(d) => Some(d),
            _ => None,
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            StochasticModel::Finite(d) => d.mean(),
            StochasticModel::Exponential { rate } => 1.0 / rate,
            StochasticModel::Gamma { shape, rate } => shape / rate,
            StochasticModel::Uniform { low, high } => 0.5 * (low + high),
            StochasticModel::Normal { mean, .. } => *mean,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            StochasticModel::Finite(d) => d.sample(rng),
            StochasticModel::Exponential { rate } => Exp::new(*rate).expect("validated").sample(rng),
            StochasticModel::Gamma { shape, rate } => Gamma::new(*shape, 1.0 / rate).expect("validated").sample(rng),
            StochasticModel::Uniform { low, high } => Uniform::new(*low, *high).expect("validated").sample(rng),
            StochasticModel::Normal { mean, sd } => Normal::new(*mean, *sd).expect("validated").sample(rng),
        }
    }

    pub fn fill<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            StochasticModel::Exponential { rate } => {
                let d = Exp::new(*rate).expect("validated");
                out.iter_mut().for_each(|x| *x = d.sample(rng));
            }
            StochasticModel::Normal { mean, sd } => {
                let d = Normal::new(*mean, *sd).expect("validated");
                out.iter_mut().for_each(|x| *x = d.sample(rng));
            }
            _ => out.iter_mut().for_each(|x| *x = self.sample(rng)),
        }
    }
}

impl From<FiniteDistribution> for StochasticModel {
    fn from(d: FiniteDistribution) -> Self {
        StochasticModel::Finite(d)
    }
}

/// `count` draws from stream `stream` of base seed `seed`.
pub fn sample_stream(model: &StochasticModel, seed: u64, stream: u64, count: usize) -> Vec<f64> {
    let mut rng = stream_rng(seed, stream);
    let mut out = vec![0.0; count];
    model.fill(&mut rng, &mut out);
    out
}
