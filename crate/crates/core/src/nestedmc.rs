//! Nested Monte Carlo estimation of `zeta1 = sqrt(2 Var(g(X)))`.
//!
//! Each section draws `K` outer inputs, `n` conditional samples of `H` per
//! input, and forms the ANOVA estimate of `Var(E[H | X])`. Section values are
//! combined by the delta method into a Student-t interval for `zeta1`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::model::{stream_id, stream_rng, StochasticModel, StreamRng};
use crate::symmetrize::{conditional_sample, sample_cost, CostSpec, RandomizedHorizonConfig};

/// Stream purpose tag of sectioning replications.
pub const SECTION_STREAM: u16 = 1;
/// Stream purpose tag of plain benchmark replications.
pub const BENCHMARK_STREAM: u16 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NestedDesign {
    pub outer: usize,
    pub inner: usize,
    pub sections: usize,
    pub confidence: f64,
}

impl Default for NestedDesign {
    fn default() -> Self {
        NestedDesign {
            outer: 30,
            inner: 10,
            sections: 20,
            confidence: 0.95,
        }
    }
}

impl NestedDesign {
    pub fn validate(&self) -> Result<()> {
        if self.outer < 2 || self.inner < 2 || self.sections < 2 {
            return Err(Error::validation(format!(
                "design needs outer, inner and sections >= 2, got ({}, {}, {})",
                self.outer, self.inner, self.sections
            )));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::validation(format!(
                "confidence {} not in (0, 1)",
                self.confidence
            )));
        }
        Ok(())
    }

    pub fn samples(&self) -> usize {
        self.outer * self.inner * self.sections
    }
}

/// Source of outer inputs and conditional cost samples.
pub trait NestedSampler: Sync {
    type Outer: Send;

    fn outer(&self, rng: &mut StreamRng) -> Self::Outer;

    /// One draw of `H` whose conditional mean given `x` is `g(x)`.
    fn inner(&self, x: &Self::Outer, rng: &mut StreamRng) -> Result<f64>;
}

/// Adapter for a [`CostSpec`] over i.i.d. inputs from a [`StochasticModel`].
pub struct CostSampler<'a> {
    pub model: &'a StochasticModel,
    pub cost: &'a CostSpec,
    pub horizon: RandomizedHorizonConfig,
}

impl<'a> CostSampler<'a> {
    pub fn new(model: &'a StochasticModel, cost: &'a CostSpec) -> Self {
        CostSampler {
            model,
            cost,
            horizon: RandomizedHorizonConfig::default(),
        }
    }
}

impl NestedSampler for CostSampler<'_> {
    type Outer = f64;

    fn outer(&self, rng: &mut StreamRng) -> f64 {
        self.model.sample(rng)
    }

    fn inner(&self, x: &f64, rng: &mut StreamRng) -> Result<f64> {
        conditional_sample(self.model, self.cost, &self.horizon, *x, rng)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnovaEstimate {
    pub sigma_m2: f64,
    pub sigma_eps2: f64,
    pub grand_mean: f64,
}

/// Unbiased ANOVA estimate of `Var(E[H | X])` from a `K x n` matrix (row per outer draw).
pub fn anova_sigma_m2<R: AsRef<[f64]>>(h: &[R]) -> Result<AnovaEstimate> {
    let k = h.len();
    if k < 2 {
        return Err(Error::validation(format!("need at least 2 outer rows, got {k}")));
    }
    let n = h[0].as_ref().len();
    if n < 2 {
        return Err(Error::validation(format!("need at least 2 inner samples, got {n}")));
    }
    if h.iter().any(|r| r.as_ref().len() != n) {
        return Err(Error::validation("ragged nested sample matrix"));
    }
    let means: Vec<f64> = h.iter().map(|r| r.as_ref().iter().sum::<f64>() / n as f64).collect();
    let grand = means.iter().sum::<f64>() / k as f64;
    let within: f64 = h
        .iter()
        .zip(&means)
        .map(|(r, m)| r.as_ref().iter().map(|v| (v - m).powi(2)).sum::<f64>())
        .sum();
    let sigma_eps2 = within / (k * (n - 1)) as f64;
    let between = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (k - 1) as f64;
    Ok(AnovaEstimate {
        sigma_m2: between - sigma_eps2 / n as f64,
        sigma_eps2,
        grand_mean: grand,
    })
}

/// Two-sided Student-t quantile `t_{1 - (1 - confidence)/2}` with `dof` degrees of freedom.
pub fn student_t_quantile(confidence: f64, dof: usize) -> Result<f64> {
    if !(confidence > 0.0 && confidence < 1.0) || dof == 0 {
        return Err(Error::validation("t quantile needs confidence in (0,1) and dof >= 1"));
    }
    let t = StudentsT::new(0.0, 1.0, dof as f64).map_err(|e| Error::validation(e.to_string()))?;
    Ok(t.inverse_cdf(0.5 + confidence / 2.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectionedEstimate {
    pub point: f64,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub raw_sections: Vec<f64>,
    pub z_bar: f64,
    pub z_sd: f64,
    /// Mean of all inner samples, an estimate of `E[g(X)]`.
    pub inner_mean: f64,
    pub clamped: bool,
    pub design: NestedDesign,
}

/// Delta-method interval for `sqrt(2 mean(z))` from section values.
pub fn delta_interval(z: &[f64], confidence: f64) -> Result<(f64, Option<(f64, f64)>, f64, f64)> {
    let n = z.len();
    if n < 2 {
        return Err(Error::validation("sectioning needs at least 2 sections"));
    }
    let z_bar = z.iter().sum::<f64>() / n as f64;
    let z_sd = (z.iter().map(|v| (v - z_bar).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    if z_bar <= 0.0 {
        return Ok((0.0, None, z_bar, z_sd));
    }
    let root = z_bar.sqrt();
    let t = student_t_quantile(confidence, n - 1)?;
    let half = z_sd / (2.0 * root) * t / (n as f64).sqrt();
    let s2 = std::f64::consts::SQRT_2;
    Ok((s2 * root, Some((s2 * (root - half), s2 * (root + half))), z_bar, z_sd))
}

fn run_section<S: NestedSampler>(
    sampler: &S,
    design: &NestedDesign,
    seed: u64,
    section: usize,
) -> Result<(AnovaEstimate, f64)> {
    let mut rng = stream_rng(seed, stream_id(SECTION_STREAM, section as u64));
    let mut rows = Vec::with_capacity(design.outer);
    for _ in 0..design.outer {
        let x = sampler.outer(&mut rng);
        let row = (0..design.inner)
            .map(|_| sampler.inner(&x, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let est = anova_sigma_m2(&rows)?;
    Ok((est, est.grand_mean))
}

/// Sectioned nested estimate of `zeta1`; sections run in parallel on the
/// current rayon pool and are aggregated in section order.
pub fn sectioned_zeta1<S: NestedSampler>(sampler: &S, design: &NestedDesign, seed: u64) -> Result<SectionedEstimate> {
    design.validate()?;
    let sections = (0..design.sections)
        .into_par_iter()
        .map(|l| run_section(sampler, design, seed, l))
        .collect::<Result<Vec<_>>>()?;
    let raw: Vec<f64> = sections.iter().map(|(e, _)| e.sigma_m2).collect();
    let inner_mean = sections.iter().map(|(_, m)| m).sum::<f64>() / sections.len() as f64;
    let (point, ci, z_bar, z_sd) = delta_interval(&raw, design.confidence)?;
    Ok(SectionedEstimate {
        point,
        ci_low: ci.map(|c| c.0),
        ci_high: ci.map(|c| c.1),
        raw_sections: raw,
        z_bar,
        z_sd,
        inner_mean,
        clamped: ci.is_none(),
        design: *design,
    })
}

/// `zeta1` from draws of `g(X)` with `g` known in closed form: the draws are
/// split into `sections` blocks whose sample variances feed the delta interval.
pub fn direct_zeta1(g_values: &[f64], sections: usize, confidence: f64) -> Result<(f64, Option<(f64, f64)>)> {
    if sections < 2 || g_values.len() < 2 * sections {
        return Err(Error::validation("direct estimate needs >= 2 sections of >= 2 draws"));
    }
    let size = g_values.len() / sections;
    let z: Vec<f64> = g_values
        .chunks_exact(size)
        .take(sections)
        .map(|c| {
            let m = c.iter().sum::<f64>() / size as f64;
            c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (size - 1) as f64
        })
        .collect();
    let (point, ci, _, _) = delta_interval(&z, confidence)?;
    Ok((point, ci))
}

/// Mean with a Student-t interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanInterval {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub se: f64,
}

pub fn mean_interval(samples: &[f64], confidence: f64) -> Result<MeanInterval> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::validation("interval needs at least 2 samples"));
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    let t = student_t_quantile(confidence, n - 1)?;
    Ok(MeanInterval {
        mean,
        ci_low: mean - t * se,
        ci_high: mean + t * se,
        se,
    })
}

/// Benchmark mean `E_0[h]` from `samples` plain replications, replication `i`
/// on stream `(BENCHMARK_STREAM, i)`.
pub fn benchmark_interval(
    model: &StochasticModel,
    cost: &CostSpec,
    samples: usize,
    confidence: f64,
    seed: u64,
) -> Result<MeanInterval> {
    model.validate()?;
    let draws = (0..samples)
        .into_par_iter()
        .map(|i| {
            sample_cost(
                model,
                cost,
                &mut stream_rng(seed, stream_id(BENCHMARK_STREAM, i as u64)),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    mean_interval(&draws, confidence)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PilotRow {
    pub inner: usize,
    pub point: f64,
    /// Sectioning standard error of the `Var(g)` estimate.
    pub se: f64,
    pub samples: usize,
}

/// Runs the sectioned estimator for each inner sample size in `inner_sizes`.
pub fn pilot<S: NestedSampler>(
    sampler: &S,
    base: &NestedDesign,
    inner_sizes: &[usize],
    seed: u64,
) -> Result<Vec<PilotRow>> {
    inner_sizes
        .iter()
        .map(|&n| {
            let design = NestedDesign { inner: n, ..*base };
            let est = sectioned_zeta1(sampler, &design, seed)?;
            Ok(PilotRow {
                inner: n,
                point: est.point,
                se: est.z_sd / (design.sections as f64).sqrt(),
                samples: design.samples(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn std_normal(rng: &mut StreamRng) -> f64 {
        rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng)
    }

    struct Toy;

    impl NestedSampler for Toy {
        type Outer = f64;
        fn outer(&self, rng: &mut StreamRng) -> f64 {
            std_normal(rng)
        }
        fn inner(&self, x: &f64, rng: &mut StreamRng) -> Result<f64> {
            Ok(x + std_normal(rng))
        }
    }

    #[test]
    fn anova_constant_and_noiseless() {
        let c = vec![vec![2.5; 4]; 3];
        let e = anova_sigma_m2(&c).unwrap();
        assert_eq!((e.sigma_m2, e.sigma_eps2), (0.0, 0.0));

        let xs = [1.0, 4.0, -2.0, 0.5];
        let rows: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x; 3]).collect();
        let e = anova_sigma_m2(&rows).unwrap();
        let m = xs.iter().sum::<f64>() / 4.0;
        let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 3.0;
        assert_eq!(e.sigma_eps2, 0.0);
        assert!((e.sigma_m2 - var).abs() < 1e-14);

        assert!(anova_sigma_m2(&[vec![1.0, 2.0]]).is_err());
        assert!(anova_sigma_m2(&[vec![1.0], vec![2.0]]).is_err());
    }

    #[test]
    fn t_quantile_reference() {
        let t = student_t_quantile(0.95, 19).unwrap();
        assert!((t - 2.093024054408263).abs() < 1e-10, "{t}");
    }

    #[test]
    fn toy_zeta1_and_determinism() {
        let design = NestedDesign {
            outer: 200,
            inner: 5,
            sections: 20,
            confidence: 0.95,
        };
        let a = sectioned_zeta1(&Toy, &design, 3).unwrap();
        let b = sectioned_zeta1(&Toy, &design, 3).unwrap();
        assert_eq!(a, b);
        assert!(!a.clamped);
        let (lo, hi) = (a.ci_low.unwrap(), a.ci_high.unwrap());
        assert!(lo <= a.point && a.point <= hi);
        assert!((a.point - 2f64.sqrt()).abs() < 0.15, "{}", a.point);
    }

    #[test]
    fn constant_cost_is_clamped() {
        struct Flat;
        impl NestedSampler for Flat {
            type Outer = ();
            fn outer(&self, _: &mut StreamRng) {}
            fn inner(&self, _: &(), _: &mut StreamRng) -> Result<f64> {
                Ok(1.0)
            }
        }
        let est = sectioned_zeta1(&Flat, &NestedDesign::default(), 0).unwrap();
        assert!(est.clamped);
        assert_eq!(est.point, 0.0);
        assert!(est.ci_low.is_none());
    }

    #[test]
    fn design_validation() {
        let bad = NestedDesign {
            inner: 1,
            ..Default::default()
        };
        assert!(matches!(sectioned_zeta1(&Toy, &bad, 0), Err(Error::Validation(_))));
        let bad = NestedDesign {
            confidence: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
