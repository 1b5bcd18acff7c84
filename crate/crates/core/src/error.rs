use thiserror::Error;

/// Errors raised by the gap solvers.
#[derive(Debug, Error)]
pub enum GapError {
    /// Caller-supplied input lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Parameter set or kernel failed validation.
    #[error("invalid {field}: {message}")]
    Invalid { field: String, message: String },

    /// Composite quadrature did not settle within its doubling budget.
    #[error("quadrature did not converge after {doublings} doublings (last estimate {estimate:e}, last difference {difference:e})")]
    Quadrature {
        doublings: usize,
        estimate: f64,
        difference: f64,
    },

    /// A bisection bracket did not straddle the root.
    #[error("bracket error: {0}")]
    Bracket(String),

    /// Fixed-point iteration ran out of iterations.
    #[error("fixed point did not converge at T = {temperature:e} after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        temperature: f64,
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    /// A converged slice left the band between the envelope gaps.
    #[error(
        "envelope violated at T = {temperature:e}: value {value:e} outside [{lower:e}, {upper:e}]"
    )]
    Envelope {
        temperature: f64,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("{path}: {message}")]
    Parse { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl GapError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        GapError::Domain(msg.into())
    }

    pub(crate) fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        GapError::Invalid {
            field: field.into(),
            message: message.into(),
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            GapError::Quadrature { .. }
                | GapError::NonConvergence { .. }
                | GapError::Envelope { .. }
                | GapError::Bracket(_)
        )
    }
}

pub type Result<T, E = GapError> = std::result::Result<T, E>;
