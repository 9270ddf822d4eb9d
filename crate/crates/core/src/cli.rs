//! Command-line front end: experiment configs, subcommands and their outputs.
//!
//! Every subcommand produces named artifacts. With `--out DIR` they are
//! written to `DIR/<name>`, otherwise they go to standard output. Failures are
//! reported as one JSON object on standard error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::Error;
use crate::exact1d::{solve_tilt, Sense};
use crate::expansion::{analyze_exact, from_estimates, sweep, DerivativeReport, Interval, Order, ReportSense};
use crate::fixedpoint::{FixedPointProblem, FixedPointSolution, SolveOptions};
use crate::model::{FiniteDistribution, StochasticModel};
use crate::nestedmc::{
    benchmark_interval, mean_interval, pilot, sectioned_zeta1, CostSampler, MeanInterval, NestedDesign, NestedSampler,
    PilotRow,
};
use crate::oracle::{brute_force_with, OracleOptions};
use crate::queue::{benchmark_table, simulate_waits, table_csv, QueueConfig};
use crate::symmetrize::{
    CostSpec, EnumeratedCost, HorizonSpec, MaxExceed, PathSum, RandomHorizon, RandomizedHorizonConfig, StoppingRule,
    SumTail, TableCost, TauLaw, ENUMERATION_BUDGET,
};

/// JSON schema of [`ExperimentConfig`].
pub const CONFIG_SCHEMA: &str = include_str!("../schema/experiment-config.schema.json");

pub const DEFAULT_SEED: u64 = 2024;
pub const DEFAULT_SAMPLES: usize = 10_000;
const DEFAULT_ETA: [f64; 5] = [0.0, 1e-4, 1e-3, 1e-2, 1e-1];
const DEFAULT_PILOT: [usize; 4] = [5, 10, 20, 40];
const CALIBRATION_TOL: f64 = 1e-12;

#[derive(Debug, Parser)]
#[command(
    name = "klsens",
    version,
    about = "Worst- and best-case sensitivity under KL-divergence model perturbations"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub opts: GlobalOpts,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalOpts {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, env = "KLSENS_SEED")]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub outer: Option<usize>,
    /// Inner samples per outer draw; `pilot` takes a comma-separated list.
    #[arg(long, global = true, value_delimiter = ',')]
    pub inner: Vec<usize>,
    #[arg(long, global = true)]
    pub sections: Option<usize>,
    #[arg(long, global = true)]
    pub confidence: Option<f64>,
    /// Comma-separated KL budgets.
    #[arg(long, global = true, value_delimiter = ',', allow_negative_numbers = true)]
    pub eta: Vec<f64>,
    /// Sweep order, 1 or 2.
    #[arg(long, global = true)]
    pub order: Option<u8>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Derivative report and eta sweep.
    Analyze,
    /// Exact optimum of a single-input cost over the eta grid.
    Exact1d,
    /// Calibrated fixed-point change of measure over the eta grid.
    Fixedpoint,
    /// Oracle, fixed point and expansion side by side.
    OracleCompare,
    /// Benchmark mean and zeta1 over server counts.
    QueueTable(QueueTableArgs),
    /// Sectioned zeta1 estimates for several inner sample sizes.
    Pilot,
}

#[derive(Debug, Clone, Args)]
pub struct QueueTableArgs {
    #[arg(long, value_enum, default_value_t = Family::Mms)]
    pub family: Family,
    #[arg(long, value_delimiter = ',', default_values_t = [20usize, 30, 40, 50, 60])]
    pub servers: Vec<usize>,
    /// Observed customer index.
    #[arg(long, default_value_t = 100)]
    pub customer: usize,
    /// Plain waiting-time replications per row.
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    pub samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Family {
    /// Poisson arrivals at rate 1, exponential services with mean s.
    Mms,
    /// Gamma(2, 2) interarrivals, uniform [0, 2s] services.
    Ggs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Input model; `queue-wait` carries its own.
    #[serde(default)]
    pub model: Option<StochasticModel>,
    /// Discretize a normal model onto a grid for exact evaluation.
    #[serde(default)]
    pub discretize: Option<Discretize>,
    pub cost: CostConfig,
    #[serde(default)]
    pub horizon: HorizonConfig,
    #[serde(default)]
    pub randomized: Option<RandomizedHorizonConfig>,
    #[serde(default)]
    pub design: Option<NestedDesign>,
    #[serde(default)]
    pub eta: Option<Vec<f64>>,
    #[serde(default)]
    pub order: Option<u8>,
    #[serde(default)]
    pub sense: ReportSense,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Plain replications for the benchmark mean in Monte Carlo mode.
    #[serde(default)]
    pub samples: Option<usize>,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub output: OutputPaths,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Discretize {
    pub atoms: usize,
    #[serde(default = "default_clip")]
    pub clip: f64,
}

fn default_clip() -> f64 {
    8.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CostConfig {
    /// `1{x_1 + ... + x_T > threshold}`.
    IidSumTail {
        threshold: f64,
    },
    /// `1{max_t x_t > level}`.
    MaxExceed {
        level: f64,
    },
    PathSum,
    /// Values over the product space of a finite model, first coordinate fastest.
    Table {
        values: Vec<f64>,
    },
    QueueWait(QueueConfig),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum HorizonConfig {
    #[default]
    Single,
    Fixed {
        t: usize,
    },
    /// Independent geometric horizon on `{1, 2, ...}`.
    Geometric {
        success: f64,
    },
    /// Independent horizon with `pmf[k] = P(tau = k + 1)`.
    Pmf {
        pmf: Vec<f64>,
    },
    /// Stops once the running cost state exceeds `stop_above`, at `t_max` at the latest.
    Bounded {
        t_max: usize,
        stop_above: f64,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Exact when the model is finite and the product space is enumerable.
    #[default]
    Auto,
    Exact,
    MonteCarlo,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    #[serde(default)]
    pub report: Option<PathBuf>,
    #[serde(default)]
    pub sweep: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {source}")]
    Config { path: PathBuf, source: serde_json::Error },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Read { .. } | CliError::Config { .. } | CliError::Usage(_) => 2,
            CliError::Write { .. } => 1,
            CliError::Core(e) => e.exit_code(),
        }
    }

    pub fn to_json(&self) -> Value {
        let kind = match self {
            CliError::Read { .. } | CliError::Write { .. } => "io",
            CliError::Config { .. } => "config",
            CliError::Usage(_) => "usage",
            CliError::Core(e) => e.kind(),
        };
        let mut v = json!({ "error": kind, "message": self.to_string(), "exit_code": self.exit_code() });
        match self {
            CliError::Config { path, source } => {
                v["path"] = json!(path);
                v["line"] = json!(source.line());
                v["column"] = json!(source.column());
            }
            CliError::Read { path, .. } | CliError::Write { path, .. } => v["path"] = json!(path),
            CliError::Core(Error::Degeneracy { assumption, .. }) => v["assumption"] = json!(assumption),
            CliError::Core(Error::Regime(_)) => v["assumption"] = json!("eta inside the tilt regime"),
            _ => {}
        }
        v
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Named output of a subcommand.
#[derive(Clone, Debug, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
    /// Destination requested by the config, used when `--out` is absent.
    pub path: Option<PathBuf>,
}

impl Artifact {
    fn new(name: &str, contents: String) -> Self {
        Artifact {
            name: name.into(),
            contents,
            path: None,
        }
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.into(),
        source,
    })?;
    parse_config(&text).map_err(|source| CliError::Config {
        path: path.into(),
        source,
    })
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, serde_json::Error> {
    serde_json::from_str(text)
}

/// Config, flags and derived settings for one run.
struct Setup {
    config: ExperimentConfig,
    dist: Option<FiniteDistribution>,
    cost: Option<CostSpec>,
    design: NestedDesign,
    eta: Vec<f64>,
    order: Order,
    seed: u64,
}

impl Setup {
    fn new(opts: &GlobalOpts) -> Result<Self, CliError> {
        let path = opts
            .config
            .as_deref()
            .ok_or_else(|| usage("this subcommand needs --config"))?;
        Self::from_config(load_config(path)?, opts)
    }

    fn from_config(config: ExperimentConfig, opts: &GlobalOpts) -> Result<Self, CliError> {
        if opts.inner.len() > 1 {
            return Err(usage("only pilot takes several --inner values"));
        }
        let mut design = config.design.unwrap_or_default();
        design.outer = opts.outer.unwrap_or(design.outer);
        if let [inner] = opts.inner[..] {
            design.inner = inner;
        }
        design.sections = opts.sections.unwrap_or(design.sections);
        design.confidence = opts.confidence.unwrap_or(design.confidence);
        design.validate()?;
        let eta = if !opts.eta.is_empty() {
            opts.eta.clone()
        } else {
            config.eta.clone().unwrap_or_else(|| DEFAULT_ETA.to_vec())
        };
        if let Some(bad) = eta.iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
            return Err(Error::Validation(format!("eta must be finite and >= 0, got {bad}")).into());
        }
        let order = Order::try_from(opts.order.or(config.order).unwrap_or(1))?;
        let seed = opts.seed.or(config.seed).unwrap_or(DEFAULT_SEED);
        let dist = finite_model(&config)?;
        let cost = build_cost(&config, dist.as_ref())?;
        Ok(Setup {
            config,
            dist,
            cost,
            design,
            eta,
            order,
            seed,
        })
    }

    fn queue(&self) -> Option<&QueueConfig> {
        match &self.config.cost {
            CostConfig::QueueWait(q) => Some(q),
            _ => None,
        }
    }

    fn model(&self) -> Result<&StochasticModel, CliError> {
        self.config.model.as_ref().ok_or_else(|| usage("config needs a model"))
    }

    fn cost(&self) -> &CostSpec {
        self.cost.as_ref().expect("non-queue cost")
    }

    fn randomized(&self) -> RandomizedHorizonConfig {
        self.config.randomized.clone().unwrap_or_default()
    }

    /// The finite model and cost when exact evaluation applies.
    fn exact(&self) -> Result<Option<(&FiniteDistribution, &CostSpec)>, CliError> {
        let enumerable = match (&self.dist, &self.cost) {
            (Some(d), Some(c)) => match c.horizon.fixed_len() {
                Some(t) => d.len().checked_pow(t as u32).is_some_and(|n| n <= ENUMERATION_BUDGET),
                None => true,
            },
            _ => false,
        };
        match (self.config.mode, enumerable) {
            (Mode::MonteCarlo, _) | (Mode::Auto, false) => Ok(None),
            (_, true) => Ok(Some((self.dist.as_ref().unwrap(), self.cost.as_ref().unwrap()))),
            (Mode::Exact, false) => Err(Error::Budget(
                "exact mode needs a finite model whose product space has at most 1e7 paths".into(),
            )
            .into()),
        }
    }

    fn require_exact(&self, what: &str) -> Result<(&FiniteDistribution, &CostSpec), CliError> {
        match (&self.dist, &self.cost) {
            (Some(d), Some(c)) => Ok((d, c)),
            _ => Err(usage(format!(
                "{what} needs a finite (or discretized) model and a non-queue cost"
            ))),
        }
    }
}

fn finite_model(config: &ExperimentConfig) -> Result<Option<FiniteDistribution>, CliError> {
    let Some(model) = &config.model else {
        return Ok(None);
    };
    model.validate()?;
    Ok(match (model, config.discretize) {
        (StochasticModel::Finite(d), None) => Some(d.clone()),
        (StochasticModel::Normal { mean, sd }, Some(g)) => {
            Some(FiniteDistribution::discretized_normal(*mean, *sd, g.atoms, g.clip)?)
        }
        (_, Some(_)) => return Err(usage("discretize applies to normal models only")),
        _ => None,
    })
}

fn build_horizon(config: &ExperimentConfig) -> Result<HorizonSpec, CliError> {
    Ok(match &config.horizon {
        HorizonConfig::Single => HorizonSpec::Single,
        HorizonConfig::Fixed { t } => {
            if *t == 0 {
                return Err(Error::Validation("fixed horizon must be >= 1".into()).into());
            }
            HorizonSpec::Fixed(*t)
        }
        HorizonConfig::Geometric { success } => {
            let law = TauLaw::Geometric { success: *success };
            law.validate()?;
            HorizonSpec::Random(RandomHorizon::Independent(law))
        }
        HorizonConfig::Pmf { pmf } => {
            let law = TauLaw::Pmf(pmf.clone());
            law.validate()?;
            HorizonSpec::Random(RandomHorizon::Independent(law))
        }
        HorizonConfig::Bounded { t_max, stop_above } => {
            let level = *stop_above;
            HorizonSpec::Random(RandomHorizon::Bounded {
                t_max: *t_max,
                rule: StoppingRule::new(move |_, state| state > level),
            })
        }
    })
}

fn build_cost(config: &ExperimentConfig, dist: Option<&FiniteDistribution>) -> Result<Option<CostSpec>, CliError> {
    if let CostConfig::QueueWait(q) = &config.cost {
        if config.model.is_some() {
            return Err(usage(
                "queue-wait takes its interarrival and service models inside the cost",
            ));
        }
        q.validate()?;
        return Ok(None);
    }
    if config.model.is_none() {
        return Err(usage("config needs a model"));
    }
    let horizon = build_horizon(config)?;
    let cost = match &config.cost {
        CostConfig::IidSumTail { threshold } => CostSpec::new(SumTail { threshold: *threshold }, horizon)
            .symmetric()
            .bounded_by(1.0),
        CostConfig::MaxExceed { level } => CostSpec::new(MaxExceed { level: *level }, horizon)
            .symmetric()
            .bounded_by(1.0),
        CostConfig::PathSum => CostSpec::new(PathSum, horizon).symmetric(),
        CostConfig::Table { values } => {
            let d = dist.ok_or_else(|| usage("a table cost needs a finite model"))?;
            let t = horizon
                .fixed_len()
                .ok_or_else(|| usage("a table cost needs a deterministic horizon"))?;
            let bound = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            CostSpec::new(TableCost::new(d, t, values.clone())?, horizon).bounded_by(bound)
        }
        CostConfig::QueueWait(_) => unreachable!(),
    };
    Ok(Some(cost))
}

fn to_json(v: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn interval(low: Option<f64>, high: Option<f64>) -> Option<Interval> {
    Some(Interval { low: low?, high: high? })
}

fn mc_report<S: NestedSampler>(
    sampler: &S,
    benchmark: MeanInterval,
    setup: &Setup,
) -> Result<DerivativeReport, CliError> {
    let est = sectioned_zeta1(sampler, &setup.design, setup.seed)?;
    let mean_ci = Interval {
        low: benchmark.ci_low,
        high: benchmark.ci_high,
    };
    Ok(from_estimates(
        benchmark.mean,
        Some(mean_ci),
        est.point,
        interval(est.ci_low, est.ci_high),
        setup.config.sense,
    )?)
}

fn report(setup: &Setup) -> Result<DerivativeReport, CliError> {
    if let Some(q) = setup.queue() {
        let waits = simulate_waits(q, setup.config.samples.unwrap_or(DEFAULT_SAMPLES), setup.seed)?;
        let m = mean_interval(&waits, setup.design.confidence)?;
        return mc_report(q, m, setup);
    }
    if let Some((dist, cost)) = setup.exact()? {
        return Ok(analyze_exact(dist, cost, &setup.randomized(), setup.config.sense)?);
    }
    let model = match (&setup.dist, setup.config.mode) {
        // forced Monte Carlo on a discretized model samples the grid
        (Some(d), _) if setup.config.discretize.is_some() => StochasticModel::Finite(d.clone()),
        _ => setup.model()?.clone(),
    };
    let cost = setup.cost();
    let samples = setup.config.samples.unwrap_or(DEFAULT_SAMPLES);
    let m = benchmark_interval(&model, cost, samples, setup.design.confidence, setup.seed)?;
    let sampler = CostSampler {
        model: &model,
        cost,
        horizon: setup.randomized(),
    };
    mc_report(&sampler, m, setup)
}

fn cmd_analyze(opts: &GlobalOpts) -> Result<Vec<Artifact>, CliError> {
    let setup = Setup::new(opts)?;
    let report = report(&setup)?;
    let line = sweep(&report, &setup.eta, setup.order)?;
    let out = &setup.config.output;
    Ok(vec![
        Artifact {
            path: out.report.clone(),
            ..Artifact::new("report.json", report.to_json() + "\n")
        },
        Artifact {
            path: out.sweep.clone(),
            ..Artifact::new("sweep.csv", line.to_csv())
        },
    ])
}

fn single_values(dist: &FiniteDistribution, cost: &CostSpec) -> Result<Vec<f64>, CliError> {
    if cost.horizon.fixed_len() != Some(1) {
        return Err(usage(
            "exact1d needs a single-input cost (horizon single or fixed with t = 1)",
        ));
    }
    Ok(EnumeratedCost::new(dist, cost)?.values().to_vec())
}

fn cmd_exact1d(opts: &GlobalOpts) -> Result<Vec<Artifact>, CliError> {
    let setup = Setup::new(opts)?;
    let (dist, cost) = setup.require_exact("exact1d")?;
    let h = single_values(dist, cost)?;
    let mut rows = Vec::new();
    for &sense in setup.config.sense.senses() {
        for &eta in &setup.eta {
            let sol = solve_tilt(dist, &h, eta, sense)?;
            rows.push(json!({ "sense": sense, "eta": eta, "optimum": sol.optimum, "beta_star": sol.beta_star }));
        }
    }
    Ok(vec![Artifact::new("exact1d.json", to_json(&rows))])
}

/// Calibrated fixed point for `sense`; `None` at `eta = 0`.
fn fixed_point(
    problem: &FixedPointProblem,
    negated: &FixedPointProblem,
    eta: f64,
    sense: Sense,
) -> Result<(f64, Option<FixedPointSolution>), CliError> {
    let p = match sense {
        Sense::Max => problem,
        Sense::Min => negated,
    };
    if eta == 0.0 {
        return Ok((sense.sign() * p.table().mean(), None));
    }
    let sol = p.calibrate(eta, CALIBRATION_TOL, SolveOptions::default())?;
    Ok((sense.sign() * sol.objective, Some(sol)))
}

fn solution_json(p: &FixedPointProblem, objective: f64, sol: Option<&FixedPointSolution>) -> Value {
    match sol {
        None => json!({ "objective": objective, "alpha": null, "kl": 0.0 }),
        Some(sol) => json!({
            "objective": objective,
            "alpha": sol.alpha,
            "kl": sol.kl,
            "iterations": sol.iterations,
            "residual": sol.residual,
            "contraction_factor": sol.contraction_factor,
            "e0_l": p.dist().expect(&sol.l_star.weights),
            "l_star": sol.l_star.weights,
        }),
    }
}

fn problems(dist: &FiniteDistribution, cost: &CostSpec) -> Result<(FixedPointProblem, FixedPointProblem), CliError> {
    if cost.horizon.fixed_len().is_none() {
        return Err(usage("fixed-point solves need a deterministic horizon"));
    }
    Ok((
        FixedPointProblem::new(dist, cost)?,
        FixedPointProblem::new(dist, &cost.negated())?,
    ))
}

fn cmd_fixedpoint(opts: &GlobalOpts) -> Result<Vec<Artifact>, CliError> {
    let setup = Setup::new(opts)?;
    let (dist, cost) = setup.require_exact("fixedpoint")?;
    let (max, min) = problems(dist, cost)?;
    let mut rows = Vec::new();
    for &sense in setup.config.sense.senses() {
        for &eta in &setup.eta {
            let (objective, sol) = fixed_point(&max, &min, eta, sense)?;
            let mut v = solution_json(&max, objective, sol.as_ref());
            v["sense"] = json!(sense);
            v["eta"] = json!(eta);
            rows.push(v);
        }
    }
    Ok(vec![Artifact::new("fixedpoint.json", to_json(&rows))])
}

/// Least-squares slope of `log y` against `log x` over the positive pairs.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let (mx, my) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x / n, b + y / n));
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn cmd_oracle_compare(opts: &GlobalOpts) -> Result<Vec<Artifact>, CliError> {
    let setup = Setup::new(opts)?;
    let (dist, cost) = setup.require_exact("oracle-compare")?;
    let report = analyze_exact(dist, cost, &setup.randomized(), setup.config.sense)?;
    let (max, min) = problems(dist, cost)?;
    let single = cost.horizon.fixed_len() == Some(1);
    let h = if single { Some(single_values(dist, cost)?) } else { None };
    let mut rows = Vec::new();
    let mut slopes = Vec::new();
    for &sense in setup.config.sense.senses() {
        let (first, second) = report.signed(sense);
        let mut etas = Vec::new();
        let mut gaps1 = Vec::new();
        let mut gaps2 = Vec::new();
        for &eta in setup.eta.iter().filter(|e| **e > 0.0) {
            let (fp, sol) = fixed_point(&max, &min, eta, sense)?;
            let options = OracleOptions {
                seed: setup.seed,
                seeds: sol.into_iter().map(|s| s.l_star).collect(),
                ..OracleOptions::default()
            };
            let oracle = brute_force_with(dist, cost, eta, sense, &options)?;
            let exact = match &h {
                Some(h) => Some(solve_tilt(dist, h, eta, sense)?.optimum),
                None => None,
            };
            let b = report.benchmark_mean;
            let first_order = b + first * eta.sqrt();
            let second_order = second.map(|z2| first_order + z2 * eta);
            let gap = |v: f64| v - oracle.optimum;
            etas.push(eta);
            gaps1.push(gap(first_order).abs());
            gaps2.push(second_order.map(|v| gap(v).abs()).unwrap_or(f64::NAN));
            rows.push(json!({
                "sense": sense,
                "eta": eta,
                "oracle": oracle.optimum,
                "oracle_method": oracle.method,
                "fixed_point": fp,
                "exact": exact,
                "first_order": first_order,
                "second_order": second_order,
                "gap_fixed_point": gap(fp),
                "gap_exact": exact.map(gap),
                "gap_first_order": gap(first_order),
                "gap_second_order": second_order.map(gap),
            }));
        }
        slopes.push(json!({
            "sense": sense,
            "first_order_slope": log_log_slope(&etas, &gaps1),
            "second_order_slope": log_log_slope(&etas, &gaps2),
        }));
    }
    let out = json!({ "zeta1": report.zeta1, "zeta2": report.zeta2, "rows": rows, "slopes": slopes });
    Ok(vec![Artifact::new("oracle_compare.json", to_json(&out))])
}

fn cmd_queue_table(opts: &GlobalOpts, args: &QueueTableArgs) -> Result<Vec<Artifact>, CliError> {
    let mut design = NestedDesign::default();
    design.outer = opts.outer.unwrap_or(design.outer);
    if let [inner] = opts.inner[..] {
        design.inner = inner;
    }
    design.sections = opts.sections.unwrap_or(design.sections);
    design.confidence = opts.confidence.unwrap_or(design.confidence);
    let configs: Vec<QueueConfig> = args
        .servers
        .iter()
        .map(|&s| match args.family {
            Family::Mms => QueueConfig::mms(s, args.customer),
            Family::Ggs => QueueConfig::ggs_default(s, args.customer),
        })
        .collect();
    for c in &configs {
        c.validate()?;
    }
    let rows = benchmark_table(&configs, args.samples, &design, opts.seed.unwrap_or(DEFAULT_SEED))?;
    Ok(vec![Artifact::new("queue_table.csv", table_csv(&rows))])
}

fn pilot_csv(rows: &[PilotRow]) -> String {
    let mut out = String::from("inner,zeta1,var_g_se,samples\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.inner, r.point, r.se, r.samples);
    }
    out
}

fn cmd_pilot(opts: &GlobalOpts) -> Result<Vec<Artifact>, CliError> {
    let pilot_opts = GlobalOpts {
        inner: Vec::new(),
        ..opts.clone()
    };
    let setup = Setup::new(&pilot_opts)?;
    let sizes = if opts.inner.is_empty() {
        DEFAULT_PILOT.to_vec()
    } else {
        opts.inner.clone()
    };
    let rows = if let Some(q) = setup.queue() {
        pilot(q, &setup.design, &sizes, setup.seed)?
    } else {
        let model = setup.model()?;
        let sampler = CostSampler {
            model,
            cost: setup.cost(),
            horizon: setup.randomized(),
        };
        pilot(&sampler, &setup.design, &sizes, setup.seed)?
    };
    Ok(vec![Artifact::new("pilot.csv", pilot_csv(&rows))])
}

/// Runs a parsed command and returns its artifacts.
pub fn execute(cli: &Cli) -> Result<Vec<Artifact>, CliError> {
    let run = || match &cli.command {
        Command::Analyze => cmd_analyze(&cli.opts),
        Command::Exact1d => cmd_exact1d(&cli.opts),
        Command::Fixedpoint => cmd_fixedpoint(&cli.opts),
        Command::OracleCompare => cmd_oracle_compare(&cli.opts),
        Command::QueueTable(args) => cmd_queue_table(&cli.opts, args),
        Command::Pilot => cmd_pilot(&cli.opts),
    };
    match cli.opts.threads {
        Some(0) => Err(usage("--threads must be >= 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| usage(e.to_string()))?
            .install(run),
        None => run(),
    }
}

/// Writes artifacts to `out`, to their configured paths, or to standard output.
pub fn emit(artifacts: &[Artifact], out: Option<&Path>) -> Result<(), CliError> {
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|source| CliError::Write {
            path: dir.into(),
            source,
        })?;
    }
    let mut stdout = std::io::stdout().lock();
    for a in artifacts {
        let target = match out {
            Some(dir) => Some(dir.join(&a.name)),
            None => a.path.clone(),
        };
        match target {
            Some(path) => fs::write(&path, &a.contents).map_err(|source| CliError::Write { path, source })?,
            None => stdout
                .write_all(a.contents.as_bytes())
                .map_err(|source| CliError::Write {
                    path: "<stdout>".into(),
                    source,
                })?,
        }
    }
    Ok(())
}

/// Full command-line run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let err = usage(e.to_string().trim_end().to_string());
            eprintln!("{}", err.to_json());
            return err.exit_code();
        }
    };
    match execute(&cli).and_then(|a| emit(&a, cli.opts.out.as_deref())) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("{}", err.to_json());
            err.exit_code()
        }
    }
}
