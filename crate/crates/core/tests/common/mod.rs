//! Instances and invariant checks shared by the property suite and the
//! acceptance run.
#![allow(dead_code)]

use klsens::exact1d::{solve_tilt, Sense};
use klsens::expansion::{analyze_exact, ReportSense};
use klsens::fixedpoint::{FixedPointProblem, LikelihoodVector, SolveOptions};
use klsens::model::{stream_rng, FiniteDistribution, StochasticModel};
use klsens::nestedmc::{sectioned_zeta1, CostSampler, NestedDesign};
use klsens::oracle::{brute_force_with, OracleOptions};
use klsens::queue::{benchmark_table, QueueConfig};
use klsens::symmetrize::{
    centered_triple, g_exact, g_nested_mc, g_tilde, g_tilde_exact, pair_nu_exact_with, CostSpec, EnumeratedCost,
    HorizonSpec, PairSum, RandomHorizon, RandomizedHorizonConfig, SumTail, TableCost, TauLaw,
};
use rand::Rng;

pub type Check = Result<(), String>;

/// Finite support with a cost table over its product space.
#[derive(Clone, Debug)]
pub struct Instance {
    pub dist: FiniteDistribution,
    pub horizon: usize,
    pub values: Vec<f64>,
}

impl Instance {
    pub fn new(atoms: Vec<f64>, weights: &[f64], horizon: usize, values: Vec<f64>) -> Self {
        Instance {
            dist: FiniteDistribution::from_weights(atoms, weights).expect("valid weights"),
            horizon,
            values,
        }
    }

    /// Random instance with `2..=max_support` atoms, horizon `1..=max_horizon`
    /// and cost values in `[0, scale)`.
    pub fn random(seed: u64, max_support: usize, max_horizon: usize, scale: f64) -> Self {
        let t = stream_rng(seed, 1).random_range(1..=max_horizon);
        Self::random_fixed(seed, max_support, t, scale)
    }

    pub fn random_fixed(seed: u64, max_support: usize, t: usize, scale: f64) -> Self {
        let mut rng = stream_rng(seed, 0);
        let n = rng.random_range(2..=max_support);
        let atoms: Vec<f64> = (0..n).map(|i| i as f64 + rng.random_range(0.0..0.5)).collect();
        let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
        let values = (0..n.pow(t as u32)).map(|_| scale * rng.random::<f64>()).collect();
        Instance::new(atoms, &weights, t, values)
    }

    pub fn horizon_spec(&self) -> HorizonSpec {
        if self.horizon == 1 {
            HorizonSpec::Single
        } else {
            HorizonSpec::Fixed(self.horizon)
        }
    }

    pub fn cost(&self) -> CostSpec {
        let bound = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        CostSpec::new(
            TableCost::new(&self.dist, self.horizon, self.values.clone()).unwrap(),
            self.horizon_spec(),
        )
        .bounded_by(bound)
    }

    pub fn is_degenerate(&self) -> bool {
        let g = g_exact(&self.dist, &self.cost()).unwrap();
        let m = self.dist.expect(&g);
        let var: f64 = self.dist.probs().iter().zip(&g).map(|(p, v)| p * (v - m).powi(2)).sum();
        var <= 1e-8
    }
}

fn close(a: f64, b: f64, tol: f64, what: &str) -> Check {
    if (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs())) {
        Ok(())
    } else {
        Err(format!("{what}: {a} vs {b}"))
    }
}

fn err(e: klsens::Error) -> String {
    e.to_string()
}

pub fn translation_invariance(inst: &Instance, shift: f64) -> Check {
    let cost = inst.cost();
    let cfg = RandomizedHorizonConfig::default();
    let a = analyze_exact(&inst.dist, &cost, &cfg, ReportSense::Max).map_err(err)?;
    let b = analyze_exact(&inst.dist, &cost.shifted(shift), &cfg, ReportSense::Max).map_err(err)?;
    close(a.zeta1, b.zeta1, 1e-9, "zeta1 under shift")?;
    close(a.zeta2.unwrap(), b.zeta2.unwrap(), 1e-7, "zeta2 under shift")?;
    close(
        a.benchmark_mean + shift,
        b.benchmark_mean,
        1e-12,
        "benchmark under shift",
    )
}

pub fn min_max_antisymmetry(inst: &Instance) -> Check {
    let cost = inst.cost();
    let cfg = RandomizedHorizonConfig::default();
    let r = analyze_exact(&inst.dist, &cost, &cfg, ReportSense::Both).map_err(err)?;
    let neg = analyze_exact(&inst.dist, &cost.negated(), &cfg, ReportSense::Both).map_err(err)?;
    let (max1, max2) = r.signed(Sense::Max);
    let (min1, _) = r.signed(Sense::Min);
    close(max1, -min1, 1e-14, "signed zeta1")?;
    close(r.zeta1, neg.zeta1, 1e-12, "zeta1 of -h")?;
    close(max2.unwrap(), -neg.zeta2.unwrap(), 1e-9, "zeta2 of -h")?;
    if inst.horizon == 1 {
        let h = EnumeratedCost::new(&inst.dist, &cost).map_err(err)?.values().to_vec();
        let minus: Vec<f64> = h.iter().map(|v| -v).collect();
        for eta in [1e-3, 1e-2] {
            let lo = solve_tilt(&inst.dist, &h, eta, Sense::Min).map_err(err)?.optimum;
            let hi = solve_tilt(&inst.dist, &minus, eta, Sense::Max).map_err(err)?.optimum;
            close(lo, -hi, 1e-12, "min h = -max(-h)")?;
        }
    }
    Ok(())
}

pub fn mean_identity(inst: &Instance) -> Check {
    let cost = inst.cost();
    let g = g_exact(&inst.dist, &cost).map_err(err)?;
    let mean_h = EnumeratedCost::new(&inst.dist, &cost).map_err(err)?.mean();
    close(
        inst.dist.expect(&g),
        inst.horizon as f64 * mean_h,
        1e-12,
        "E[g] = T E[h]",
    )
}

pub fn nu_centering(inst: &Instance, c: f64, d: f64) -> Check {
    let p = pair_nu_exact_with(&inst.dist, &inst.cost(), PairSum::Full).map_err(err)?;
    let shifted_pair: Vec<Vec<f64>> = p.pair.iter().map(|r| r.iter().map(|v| v + c).collect()).collect();
    let shifted_g: Vec<f64> = p.g.iter().map(|v| v + d).collect();
    let probs = inst.dist.probs();
    let scale = p.g.iter().fold(1.0f64, |m, v| m.max(v.abs())).powi(3);
    let a = centered_triple(probs, &p.pair, &p.g);
    close(
        a,
        centered_triple(probs, &shifted_pair, &p.g),
        1e-11 * scale,
        "nu under G shift",
    )?;
    close(
        a,
        centered_triple(probs, &p.pair, &shifted_g),
        1e-11 * scale,
        "nu under g shift",
    )
}

pub fn nu_lower_triangle(inst: &Instance) -> Check {
    let full = pair_nu_exact_with(&inst.dist, &inst.cost(), PairSum::Full).map_err(err)?;
    let lower = pair_nu_exact_with(&inst.dist, &inst.cost(), PairSum::TwiceLower).map_err(err)?;
    let scale = full.g.iter().fold(1.0f64, |m, v| m.max(v.abs())).powi(3);
    close(full.nu, lower.nu, 1e-11 * scale, "nu full vs twice lower")
}

/// Tail cost `1{sum > threshold}` with a fixed or random horizon.
pub fn tail_cost(threshold: f64, horizon: HorizonSpec) -> CostSpec {
    CostSpec::new(SumTail { threshold }, horizon)
        .symmetric()
        .bounded_by(1.0)
}

fn centered(dist: &FiniteDistribution, v: &[f64]) -> Vec<f64> {
    let m = dist.expect(v);
    v.iter().map(|x| x - m).collect()
}

pub fn deterministic_tau(dist: &FiniteDistribution, t: usize, threshold: f64) -> Check {
    let fixed = g_exact(dist, &tail_cost(threshold, HorizonSpec::Fixed(t))).map_err(err)?;
    let law = TauLaw::deterministic(t).map_err(err)?;
    let random = tail_cost(threshold, HorizonSpec::Random(RandomHorizon::Independent(law)));
    let tilde = g_tilde_exact(dist, &random, &RandomizedHorizonConfig::default()).map_err(err)?;
    for (a, b) in centered(dist, &fixed).iter().zip(centered(dist, &tilde.g)) {
        close(*a, b, 1e-12, "centered g~ vs g")?;
    }
    Ok(())
}

pub fn randomized_unbiased(dist: &FiniteDistribution, success: f64, threshold: f64, seed: u64) -> Check {
    let law = TauLaw::Geometric { success };
    let cost = tail_cost(threshold, HorizonSpec::Random(RandomHorizon::Independent(law)));
    let cfg = RandomizedHorizonConfig::default();
    let exact = g_tilde_exact(dist, &cost, &cfg).map_err(err)?;
    let model = StochasticModel::Finite(dist.clone());
    for (i, &x) in dist.atoms().iter().enumerate() {
        let mc = g_tilde(&model, &cost, &cfg, x, 10_000, seed, i as u64).map_err(err)?;
        let gap = (mc.mean - exact.g[i]).abs();
        if gap > 4.0 * mc.se + exact.tail_bound {
            return Err(format!("g~({x}): mc {} +- {} vs exact {}", mc.mean, mc.se, exact.g[i]));
        }
    }
    Ok(())
}

fn unit_mean(dist: &FiniteDistribution, l: &LikelihoodVector, what: &str) -> Check {
    close(dist.expect(&l.weights), 1.0, 1e-12, what)
}

pub fn likelihood_unit_mean(inst: &Instance, eta: f64) -> Check {
    let cost = inst.cost();
    let problem = FixedPointProblem::new(&inst.dist, &cost).map_err(err)?;
    let sol = match problem.calibrate(eta, 1e-10, SolveOptions::default()) {
        // outside the contraction regime nothing is produced
        Err(klsens::Error::Regime(_)) => return Ok(()),
        other => other.map_err(err)?,
    };
    unit_mean(&inst.dist, &sol.l_star, "E0[L*]")?;
    let k = problem
        .apply_k(&LikelihoodVector::ones(inst.dist.len()), sol.alpha)
        .map_err(err)?;
    unit_mean(&inst.dist, &k, "E0[K(1)]")?;
    let approx = LikelihoodVector {
        weights: problem.quadratic_approx(sol.beta()).map_err(err)?,
    };
    close(inst.dist.expect(&approx.weights), 1.0, 1e-9, "E0[quadratic L]")?;
    if inst.dist.len() <= 8 && inst.horizon <= 3 {
        let opts = OracleOptions {
            restarts: 8,
            ..OracleOptions::default()
        };
        let o = brute_force_with(&inst.dist, &cost, eta, Sense::Max, &opts).map_err(err)?;
        let ratio: Vec<f64> = o
            .argmax
            .probs()
            .iter()
            .zip(inst.dist.probs())
            .map(|(q, p)| q / p)
            .collect();
        unit_mean(&inst.dist, &LikelihoodVector { weights: ratio }, "E0[oracle ratio]")?;
    }
    Ok(())
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}

/// Every seeded pipeline returns identical results on reruns and across pool sizes.
pub fn determinism(seed: u64) -> Check {
    let model = StochasticModel::Normal { mean: 0.0, sd: 1.0 };
    let cost = tail_cost(1.0, HorizonSpec::Fixed(3));
    let design = NestedDesign {
        outer: 20,
        inner: 4,
        sections: 5,
        confidence: 0.95,
    };
    let nested = |threads| {
        in_pool(threads, || {
            sectioned_zeta1(&CostSampler::new(&model, &cost), &design, seed).unwrap()
        })
    };
    if nested(1) != nested(4) || nested(4) != nested(4) {
        return Err("sectioned estimate depends on the pool".into());
    }
    let queue = [QueueConfig::mms(2, 8)];
    let table = |threads| in_pool(threads, || benchmark_table(&queue, 200, &design, seed).unwrap());
    if table(1) != table(3) {
        return Err("queue table depends on the pool".into());
    }
    let mc = |s| g_nested_mc(&model, &cost, 0.3, 500, s, 9).unwrap();
    if mc(seed) != mc(seed) {
        return Err("g_nested_mc not reproducible".into());
    }
    let inst = Instance::random(seed, 3, 2, 1.0);
    let opts = OracleOptions {
        restarts: 6,
        seed,
        ..OracleOptions::default()
    };
    let o = |threads| {
        in_pool(threads, || {
            brute_force_with(&inst.dist, &inst.cost(), 0.01, Sense::Max, &opts)
        })
    };
    if o(1) != o(4) {
        return Err("oracle depends on the pool".into());
    }
    Ok(())
}
