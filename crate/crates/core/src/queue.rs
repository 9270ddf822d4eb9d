//! FIFO multi-server queue started empty, observed at the `N`-th customer.
//!
//! Waiting times follow the Kiefer-Wolfowitz recursion on the sorted vector of
//! remaining work per server. Customer 1 arrives at time 0 and `gaps[i]` is the
//! interarrival time before customer `i + 1`, so `gaps[0]` is never used.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::expansion::Interval;
use crate::model::{stream_id, stream_rng, StochasticModel, StreamRng};
use crate::nestedmc::{mean_interval, sectioned_zeta1, NestedDesign, NestedSampler, SectionedEstimate};
use crate::symmetrize::{Cost, CostSpec, HorizonSpec};

/// Stream purpose tag of plain waiting-time replications.
pub const WAIT_STREAM: u16 = 3;

/// Which input is perturbed; the other one is auxiliary randomness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Perturbed {
    #[default]
    Service,
    Interarrival,
}

/// Inner sampler of the nested estimator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InnerScheme {
    /// `sum_t W_N` with `x` at position `t` and fresh draws elsewhere for every `t`.
    #[default]
    Sequential,
    /// The swap sum `S_h` on one common draw.
    Swap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueueConfig {
    pub servers: usize,
    pub interarrival: StochasticModel,
    pub service: StochasticModel,
    /// Index `N` of the observed customer.
    pub customer: usize,
    #[serde(default)]
    pub perturbed: Perturbed,
    #[serde(default)]
    pub inner: InnerScheme,
}

impl QueueConfig {
    /// `M/M/s` with arrival rate 1 and service rate `1/s`.
    pub fn mms(servers: usize, customer: usize) -> Self {
        QueueConfig {
            servers,
            interarrival: StochasticModel::Exponential { rate: 1.0 },
            service: StochasticModel::Exponential {
                rate: 1.0 / servers as f64,
            },
            customer,
            perturbed: Perturbed::Service,
            inner: InnerScheme::Sequential,
        }
    }

    /// Gamma(2, 2) interarrivals (mean 1) and uniform `[0, 2s]` services (mean `s`).
    pub fn ggs_default(servers: usize, customer: usize) -> Self {
        QueueConfig {
            servers,
            interarrival: StochasticModel::Gamma { shape: 2.0, rate: 2.0 },
            service: StochasticModel::Uniform {
                low: 0.0,
                high: 2.0 * servers as f64,
            },
            customer,
            perturbed: Perturbed::Service,
            inner: InnerScheme::Sequential,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.servers == 0 {
            return Err(Error::validation("queue needs at least one server"));
        }
        if self.customer == 0 {
            return Err(Error::validation("customer index must be >= 1"));
        }
        self.interarrival.validate()?;
        self.service.validate()
    }

    fn perturbed_model(&self) -> &StochasticModel {
        match self.perturbed {
            Perturbed::Service => &self.service,
            Perturbed::Interarrival => &self.interarrival,
        }
    }

    fn auxiliary_model(&self) -> &StochasticModel {
        match self.perturbed {
            Perturbed::Service => &self.interarrival,
            Perturbed::Interarrival => &self.service,
        }
    }

    /// The waiting time of customer `N` as a cost of the perturbed input path.
    pub fn cost_spec(&self) -> CostSpec {
        CostSpec::new(
            QueueWait {
                servers: self.servers,
                perturbed: self.perturbed,
            },
            HorizonSpec::Fixed(self.customer),
        )
        .with_auxiliary(self.auxiliary_model().clone(), self.customer)
    }

    fn wait(&self, path: &[f64], aux: &[f64]) -> f64 {
        match self.perturbed {
            Perturbed::Service => kiefer_wolfowitz(path, aux, self.servers),
            Perturbed::Interarrival => kiefer_wolfowitz(aux, path, self.servers),
        }
    }
}

/// Sorted remaining work per server seen by an arriving customer.
#[derive(Clone, Debug, PartialEq)]
pub struct WorkloadVector(Vec<f64>);

impl WorkloadVector {
    pub fn empty(servers: usize) -> Self {
        WorkloadVector(vec![0.0; servers])
    }

    /// Wait of the customer arriving now.
    pub fn wait(&self) -> f64 {
        self.0[0]
    }

    /// Serves the arriving customer on the least loaded server, then lets `gap`
    /// time pass until the next arrival.
    pub fn advance(&mut self, service: f64, gap: f64) {
        let w = &mut self.0;
        let head = w[0] + service;
        // w[1..] is sorted, so the new head slides right to its place
        let pos = w[1..].partition_point(|&v| v < head);
        w.copy_within(1..=pos, 0);
        w[pos] = head;
        for v in w.iter_mut() {
            *v = (*v - gap).max(0.0);
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_valid(&self) -> bool {
        self.0.windows(2).all(|p| p[0] <= p[1]) && self.0.iter().all(|&v| v >= 0.0)
    }
}

/// Waiting time of customer `services.len()`.
pub fn kiefer_wolfowitz(services: &[f64], gaps: &[f64], servers: usize) -> f64 {
    let n = services.len();
    debug_assert!(gaps.len() >= n);
    let mut w = WorkloadVector::empty(servers);
    for i in 0..n.saturating_sub(1) {
        w.advance(services[i], gaps[i + 1]);
    }
    w.wait()
}

/// Single-server waiting time of the last customer by the Lindley recursion.
pub fn lindley(services: &[f64], gaps: &[f64]) -> f64 {
    let mut w = 0.0f64;
    for i in 0..services.len().saturating_sub(1) {
        w = (w + services[i] - gaps[i + 1]).max(0.0);
    }
    w
}

/// Waiting-time cost: `path` is the perturbed input, `aux` the other one.
#[derive(Clone, Copy, Debug)]
pub struct QueueWait {
    pub servers: usize,
    pub perturbed: Perturbed,
}

impl Cost for QueueWait {
    fn eval(&self, path: &[f64], aux: &[f64]) -> f64 {
        match self.perturbed {
            Perturbed::Service => kiefer_wolfowitz(path, aux, self.servers),
            Perturbed::Interarrival => kiefer_wolfowitz(aux, path, self.servers),
        }
    }
}

fn draw_paths(config: &QueueConfig, rng: &mut StreamRng, path: &mut Vec<f64>, aux: &mut Vec<f64>) {
    path.resize(config.customer, 0.0);
    aux.resize(config.customer, 0.0);
    config.perturbed_model().fill(rng, path);
    config.auxiliary_model().fill(rng, aux);
}

fn one_wait(config: &QueueConfig, rng: &mut StreamRng) -> f64 {
    let (mut path, mut aux) = (Vec::new(), Vec::new());
    draw_paths(config, rng, &mut path, &mut aux);
    config.wait(&path, &aux)
}

/// Waiting time of customer `N` on the replication `(seed, stream)`.
pub fn simulate_wait(config: &QueueConfig, seed: u64, stream: u64) -> Result<f64> {
    config.validate()?;
    Ok(one_wait(config, &mut stream_rng(seed, stream)))
}

/// `count` independent waiting times, replication `i` on stream `(WAIT_STREAM, i)`.
pub fn simulate_waits(config: &QueueConfig, count: usize, seed: u64) -> Result<Vec<f64>> {
    config.validate()?;
    Ok((0..count)
        .into_par_iter()
        .map(|i| one_wait(config, &mut stream_rng(seed, stream_id(WAIT_STREAM, i as u64))))
        .collect())
}

/// One sample of `S_h` given that the first perturbed input equals `x`.
///
/// The remaining perturbed inputs and all auxiliary inputs are drawn once;
/// `x` is then swapped into every position `t` in turn (with the drawn value
/// at `t` moved to position 1) and the `N` waiting times are summed.
pub fn conditional_s_h_with(config: &QueueConfig, x: f64, rng: &mut StreamRng) -> Result<f64> {
    if !(x.is_finite() && x >= 0.0) {
        return Err(Error::validation(format!("conditioning value must be >= 0, got {x}")));
    }
    let (mut path, mut aux) = (Vec::new(), Vec::new());
    draw_paths(config, rng, &mut path, &mut aux);
    path[0] = x;
    let mut total = config.wait(&path, &aux);
    for t in 1..path.len() {
        path.swap(0, t);
        total += config.wait(&path, &aux);
        path.swap(0, t);
    }
    Ok(total)
}

/// One sample with conditional mean `g(x) = sum_t E[W_N | X_t = x]`, drawing
/// independent inputs for each position `t`.
pub fn sequential_sample_with(config: &QueueConfig, x: f64, rng: &mut StreamRng) -> Result<f64> {
    if !(x.is_finite() && x >= 0.0) {
        return Err(Error::validation(format!("conditioning value must be >= 0, got {x}")));
    }
    let (mut path, mut aux) = (Vec::new(), Vec::new());
    let mut total = 0.0;
    for t in 0..config.customer {
        draw_paths(config, rng, &mut path, &mut aux);
        path[t] = x;
        total += config.wait(&path, &aux);
    }
    Ok(total)
}

pub fn conditional_s_h(config: &QueueConfig, x: f64, seed: u64, stream: u64) -> Result<f64> {
    config.validate()?;
    conditional_s_h_with(config, x, &mut stream_rng(seed, stream))
}

impl NestedSampler for QueueConfig {
    type Outer = f64;

    fn outer(&self, rng: &mut StreamRng) -> f64 {
        self.perturbed_model().sample(rng)
    }

    fn inner(&self, x: &f64, rng: &mut StreamRng) -> Result<f64> {
        match self.inner {
            InnerScheme::Sequential => sequential_sample_with(self, *x, rng),
            InnerScheme::Swap => conditional_s_h_with(self, *x, rng),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub servers: usize,
    pub mean: f64,
    pub mean_ci: Interval,
    pub deriv: f64,
    pub deriv_ci: Option<Interval>,
    pub relative_impact: Option<f64>,
    pub estimate: SectionedEstimate,
}

/// Row per config: benchmark mean from `samples` plain replications and the
/// sectioned `zeta1` estimate under `design`.
pub fn benchmark_table(
    configs: &[QueueConfig],
    samples: usize,
    design: &NestedDesign,
    seed: u64,
) -> Result<Vec<TableRow>> {
    design.validate()?;
    configs
        .iter()
        .enumerate()
        .map(|(r, config)| {
            let row_seed = seed.wrapping_add((r as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let waits = simulate_waits(config, samples, row_seed)?;
            let m = mean_interval(&waits, design.confidence)?;
            let est = sectioned_zeta1(config, design, row_seed)?;
            let deriv_ci = match (est.ci_low, est.ci_high) {
                (Some(low), Some(high)) => Some(Interval { low, high }),
                _ => None,
            };
            Ok(TableRow {
                servers: config.servers,
                mean: m.mean,
                mean_ci: Interval {
                    low: m.ci_low,
                    high: m.ci_high,
                },
                deriv: est.point,
                deriv_ci,
                relative_impact: (m.mean != 0.0).then(|| est.point / m.mean.abs()),
                estimate: est,
            })
        })
        .collect()
}

pub fn table_csv(rows: &[TableRow]) -> String {
    let mut out = String::from("servers,mean,ci_low,ci_high,deriv,deriv_ci_low,deriv_ci_high,relative_impact\n");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.servers,
            r.mean,
            r.mean_ci.low,
            r.mean_ci.high,
            r.deriv,
            opt(r.deriv_ci.map(|c| c.low)),
            opt(r.deriv_ci.map(|c| c.high)),
            opt(r.relative_impact)
        );
    }
    out
}
