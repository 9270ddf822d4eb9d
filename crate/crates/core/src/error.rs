use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure modes shared by every solver and estimator in the crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("absolute continuity violated: {0}")]
    AbsoluteContinuity(String),

    #[error("degenerate cost: {assumption} requires a non-constant {subject} (variance {variance:e})")]
    Degeneracy {
        assumption: &'static str,
        subject: &'static str,
        variance: f64,
    },

    #[error("numeric range exceeded: {0}")]
    NumericRange(String),

    #[error("budget exceeded: {0}")]
    Budget(String),

    #[error(
        "fixed-point iteration stopped contracting at alpha = {alpha:e} after {iterations} iterations \
         (last contraction factor {factor:.4}, residual {residual:e})"
    )]
    ContractionFailure {
        alpha: f64,
        iterations: usize,
        factor: f64,
        residual: f64,
    },

    #[error("outside the valid regime: {0}")]
    Regime(String),

    #[error("randomized horizon pmf vanishes at omega = {omega} where P(tau >= omega) = {mass:e}")]
    Bias { omega: usize, mass: f64 },
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Validation(_) => "validation",
            Error::AbsoluteContinuity(_) => "absolute_continuity",
            Error::Degeneracy { .. } => "degeneracy",
            Error::NumericRange(_) => "numeric_range",
            Error::Budget(_) => "budget",
            Error::ContractionFailure { .. } => "contraction_failure",
            Error::Regime(_) => "regime",
            Error::Bias { .. } => "bias",
        }
    }

    /// Process exit code: 2 input, 3 regime, 4 budget.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) | Error::AbsoluteContinuity(_) | Error::Bias { .. } => 2,
            Error::Degeneracy { .. } | Error::NumericRange(_) | Error::ContractionFailure { .. } | Error::Regime(_) => {
                3
            }
            Error::Budget(_) => 4,
        }
    }
}
