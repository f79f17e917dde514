use thiserror::Error;

use crate::finite::FixedPointReport;

/// Errors raised by the solvers and their plumbing.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("infeasible admissible set at state {state}: {count} supported states with floor {floor} exceed unit mass")]
    Infeasible { state: usize, count: usize, floor: f64 },

    #[error("size cap exceeded: {what} has {count} elements (cap {cap})")]
    SizeCap { what: String, count: u128, cap: u128 },

    #[error("inner minimization did not converge after {iterations} iterations (residual {residual:e})")]
    InnerNonConvergence { iterations: usize, residual: f64 },

    #[error("fixed-point iteration did not converge{}: residual {:e} after {} iterations", step_label(.step), .report.residual, .report.iterations)]
    NonConvergence {
        step: Option<usize>,
        report: FixedPointReport,
    },

    #[error("integrator accuracy check failed: step-halving disagreement {disagreement:e} exceeds {tolerance:e}")]
    Accuracy { disagreement: f64, tolerance: f64 },

    #[error("argument outside domain: {0}")]
    Domain(String),

    #[error("artifact integrity error: {0}")]
    Integrity(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn step_label(step: &Option<usize>) -> String {
    match step {
        Some(k) => format!(" at time index {k}"),
        None => String::new(),
    }
}

impl Error {
    /// Attaches a backward-step index to a fixed-point failure.
    pub fn at_step(self, k: usize) -> Self {
        match self {
            Error::NonConvergence { report, .. } => Error::NonConvergence {
                step: Some(k),
                report,
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
