use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::FiniteDistribution;

/// Cost evaluated on a path of primary draws and a path of auxiliary draws.
pub trait Cost: Send + Sync {
    fn eval(&self, path: &[f64], aux: &[f64]) -> f64;

    /// One-dimensional state recursion reproducing `eval` on auxiliary-free
    /// paths, if the cost has one. Exact random-horizon computations need it.
    fn recursion(&self) -> Option<&dyn CostRecursion> {
        None
    }
}

impl<F> Cost for F
where
    F: Fn(&[f64], &[f64]) -> f64 + Send + Sync,
{
    fn eval(&self, path: &[f64], aux: &[f64]) -> f64 {
        self(path, aux)
    }
}

/// `value(step(...step(initial, x_1)..., x_t)) == eval(x_1..x_t, [])`.
pub trait CostRecursion: Send + Sync {
    fn initial(&self) -> f64;
    fn step(&self, state: f64, x: f64) -> f64;
    fn value(&self, state: f64) -> f64;
}

/// `1{x_1 + ... + x_T > threshold}`.
#[derive(Clone, Copy, Debug)]
pub struct SumTail {
    pub threshold: f64,
}

impl Cost for SumTail {
    fn eval(&self, path: &[f64], _aux: &[f64]) -> f64 {
        let s: f64 = path.iter().sum();
        if s > self.threshold {
            1.0
        } else {
            0.0
        }
    }

    fn recursion(&self) -> Option<&dyn CostRecursion> {
        Some(self)
    }
}

impl CostRecursion for SumTail {
    fn initial(&self) -> f64 {
        0.0
    }
    fn step(&self, state: f64, x: f64) -> f64 {
        state + x
    }
    fn value(&self, state: f64) -> f64 {
        if state > self.threshold {
            1.0
        } else {
            0.0
        }
    }
}

/// `1{max_t x_t > level}`.
#[derive(Clone, Copy, Debug)]
pub struct MaxExceed {
    pub level: f64,
}

impl Cost for MaxExceed {
    fn eval(&self, path: &[f64], _aux: &[f64]) -> f64 {
        if path.iter().any(|&x| x > self.level) {
            1.0
        } else {
            0.0
        }
    }

    fn recursion(&self) -> Option<&dyn CostRecursion> {
        Some(self)
    }
}

impl CostRecursion for MaxExceed {
    fn initial(&self) -> f64 {
        f64::NEG_INFINITY
    }
    fn step(&self, state: f64, x: f64) -> f64 {
        state.max(x)
    }
    fn value(&self, state: f64) -> f64 {
        if state > self.level {
            1.0
        } else {
            0.0
        }
    }
}

/// `x_1 + ... + x_T`.
#[derive(Clone, Copy, Debug, Default)]
pub struct PathSum;

impl Cost for PathSum {
    fn eval(&self, path: &[f64], _aux: &[f64]) -> f64 {
        path.iter().sum()
    }

    fn recursion(&self) -> Option<&dyn CostRecursion> {
        Some(self)
    }
}

impl CostRecursion for PathSum {
    fn initial(&self) -> f64 {
        0.0
    }
    fn step(&self, state: f64, x: f64) -> f64 {
        state + x
    }
    fn value(&self, state: f64) -> f64 {
        state
    }
}

/// Cost given as a table over the product space of a finite support.
///
/// Entry `index = sum_t i_t * n^t` holds `h(atoms[i_1], ..., atoms[i_T])`.
#[derive(Clone, Debug)]
pub struct TableCost {
    atoms: Vec<f64>,
    horizon: usize,
    values: Vec<f64>,
}

impl TableCost {
    pub fn new(support: &FiniteDistribution, horizon: usize, values: Vec<f64>) -> Result<Self> {
        let expected = support
            .len()
            .checked_pow(horizon as u32)
            .ok_or_else(|| Error::validation("table size overflows"))?;
        if horizon == 0 || values.len() != expected {
            return Err(Error::validation(format!(
                "cost table needs {expected} entries for horizon {horizon}, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("cost table entries must be finite"));
        }
        Ok(TableCost {
            atoms: support.atoms().to_vec(),
            horizon,
            values,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

impl Cost for TableCost {
    fn eval(&self, path: &[f64], _aux: &[f64]) -> f64 {
        assert_eq!(path.len(), self.horizon, "table cost evaluated off its horizon");
        let n = self.atoms.len();
        let mut index = 0;
        for &x in path.iter().rev() {
            let i = self
                .atoms
                .iter()
                .position(|&a| a == x)
                .expect("table cost evaluated off its support");
            index = index * n + i;
        }
        self.values[index]
    }
}

/// Stopping decision `(t, recursion state after X_t) -> stop at t`.
#[derive(Clone)]
pub struct StoppingRule(Arc<dyn Fn(usize, f64) -> bool + Send + Sync>);

impl StoppingRule {
    pub fn new(rule: impl Fn(usize, f64) -> bool + Send + Sync + 'static) -> Self {
        StoppingRule(Arc::new(rule))
    }

    pub fn stops(&self, t: usize, state: f64) -> bool {
        (self.0)(t, state)
    }
}

impl fmt::Debug for StoppingRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("StoppingRule(..)")
    }
}
