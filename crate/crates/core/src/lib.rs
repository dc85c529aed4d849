//! Penalized likelihood estimation by majorization–minimization with
//! iterated soft-thresholding.
//!
//! The objective is `ξ(β̃) = -ℓ(β̃) + Σ_j p(|β_j|; λ_j) + λ ε ‖β‖²` for a
//! gaussian, logistic, Poisson or Cox likelihood and a penalty from
//! [`penalty::PenaltyFamily`]. Fits are driven from [`solver`]; [`accel`]
//! wraps any fit with SQUAREM extrapolation and [`simlab`] generates the
//! synthetic benchmark designs.

pub mod accel;
pub mod error;
pub mod fidelity;
pub mod penalty;
pub mod simlab;
pub mod solver;

pub use error::{MistError, Result};
pub use fidelity::{CoefficientVector, DesignMatrix, Family, FidelityModel, Response};
pub use penalty::{PenaltyFamily, PenaltySpec};
pub use solver::{FitResult, Problem, SolverConfig, Termination};
