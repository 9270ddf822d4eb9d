//! Robust sensitivity of stochastic-model performance measures to
//! input-distribution misspecification within a Kullback-Leibler ball.
//!
//! The worst-case value of `E[h]` over distributions within KL divergence
//! `eta` of the benchmark expands as
//! `E_0[h] + zeta1 sqrt(eta) + zeta2 eta + O(eta^1.5)`. The crate computes the
//! coefficients exactly on finite supports and by nested Monte Carlo for
//! simulation models, and cross-checks them against exact tilting, a
//! fixed-point solver and a brute-force optimizer.

pub mod cli;
pub mod error;
pub mod exact1d;
pub mod expansion;
pub mod fixedpoint;
pub mod model;
pub mod nestedmc;
pub mod oracle;
pub mod queue;
pub mod symmetrize;

pub use error::{Error, Result};
