use nalgebra::DVector;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, MistError>;

#[derive(Debug, Error)]
pub enum MistError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("poisson fidelity has no global curvature bound; use the separable majorizer or supply a region radius")]
    NotGloballyLipschitz,

    #[error("exponent overflow in {context} (max linear predictor {max_eta})")]
    Overflow { context: &'static str, max_eta: f64 },

    #[error("power iteration did not converge after {iterations} iterations (last Rayleigh quotient {rayleigh})")]
    PowerIteration { iterations: usize, rayleigh: f64 },

    #[error("inner soft-thresholding exceeded {iterations} iterations (last step norm {residual})")]
    InnerMaxIter {
        iterations: usize,
        residual: f64,
        iterate: DVector<f64>,
    },

    #[error("objective increased after {halvings} step halvings (increase {increase})")]
    DescentFailure { halvings: usize, increase: f64 },

    #[error("scalar subproblem failed for coordinate {coordinate}: {reason}")]
    ScalarSolver { coordinate: usize, reason: String },

    #[error("maximum likelihood estimate unavailable: {0}")]
    NoMle(String),
}

impl MistError {
    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            MistError::Domain(_) => "domain",
            MistError::Validation(_) => "validation",
            MistError::DimensionMismatch { .. } => "dimension_mismatch",
            MistError::NotGloballyLipschitz => "not_globally_lipschitz",
            MistError::Overflow { .. } => "overflow",
            MistError::PowerIteration { .. } => "power_iteration",
            MistError::InnerMaxIter { .. } => "inner_max_iter",
            MistError::DescentFailure { .. } => "descent_failure",
            MistError::ScalarSolver { .. } => "scalar_solver",
            MistError::NoMle(_) => "no_mle",
        }
    }
}

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(MistError::DimensionMismatch { expected, found })
    }
}
