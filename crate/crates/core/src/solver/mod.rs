//! The MM engine: configuration, problem definition, the outer loop and its
//! diagnostics.

mod engine;
mod ist;
mod poisson;

use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, MistError, Result};
use crate::fidelity::{CoefficientVector, FidelityModel};
use crate::penalty::PenaltySpec;

pub use engine::{
    fit, glm_mm_fit, glm_mm_map, glm_surrogate, lambda_path, mm_outer, one_step_fit,
    poisson_mm_fit, poisson_mm_map, resolve_start, resolve_step, StartPreset,
};
pub(crate) use engine::{descent_step, finish, map_stepper, objective_settled};
pub use ist::{ist_minimize, soft_threshold, soft_threshold_vec, IstOutcome};

/// Safety factor applied to `2/λ*` when the step is chosen automatically.
pub const AUTO_STEP_SAFETY: f64 = 0.95;
/// Slack allowed when checking that an objective did not increase.
pub const DESCENT_SLACK: f64 = 1e-12;
/// Maximum number of step halvings tried by the descent safeguard.
pub const MAX_HALVINGS: usize = 30;

/// Outer step constant `ϖ`. Serialized as `"auto"` or a number.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum StepSize {
    #[default]
    Auto,
    Fixed(f64),
}

impl Serialize for StepSize {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            StepSize::Auto => s.serialize_str("auto"),
            StepSize::Fixed(w) => s.serialize_f64(*w),
        }
    }
}

impl<'de> Deserialize<'de> for StepSize {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Number(w) => Ok(StepSize::Fixed(w)),
            Raw::Text(t) if t.eq_ignore_ascii_case("auto") => Ok(StepSize::Auto),
            Raw::Text(t) => Err(serde::de::Error::custom(format!(
                "expected \"auto\" or a number, got \"{t}\""
            ))),
        }
    }
}

/// Relaxation constants `δ_n ∈ (0, 1]` for the inner iterations. A schedule
/// shorter than the run keeps its last entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Relaxation {
    Constant(f64),
    Schedule(Vec<f64>),
}

impl Default for Relaxation {
    fn default() -> Self {
        Relaxation::Constant(1.0)
    }
}

impl Relaxation {
    /// `δ_n` for the 1-based inner iteration `n`.
    pub fn at(&self, n: usize) -> f64 {
        match self {
            Relaxation::Constant(d) => *d,
            Relaxation::Schedule(s) => match s.get(n.saturating_sub(1)) {
                Some(d) => *d,
                None => s.last().copied().unwrap_or(1.0),
            },
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = |d: &f64| *d > 0.0 && *d <= 1.0;
        let valid = match self {
            Relaxation::Constant(d) => ok(d),
            Relaxation::Schedule(s) => !s.is_empty() && s.iter().all(ok),
        };
        if valid {
            Ok(())
        } else {
            Err(MistError::Validation(
                "relaxation constants must lie in (0, 1]".into(),
            ))
        }
    }
}

/// Which surrogate [`mm_outer`] minimizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateKind {
    /// Quadratic surrogate for SCAD and MCP, linearized penalty otherwise.
    #[default]
    Auto,
    /// Linearize the penalty only (`h = 0`); needs `p'(r) > 0` everywhere.
    Lla,
    /// Strictly majorizing quadratic surrogate around the current iterate.
    Quadratic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub step_omega: StepSize,
    pub relaxation: Relaxation,
    pub coef_tol: f64,
    pub obj_tol: f64,
    pub max_outer: usize,
    pub inner_tol: f64,
    pub inner_max: usize,
    pub descent_check: bool,
    pub surrogate: SurrogateKind,
    /// Radius of the ball `‖β̃‖ ≤ R` on which a Poisson curvature bound is
    /// taken when the Poisson model is run through the quadratic update.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub region_radius: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            step_omega: StepSize::Auto,
            relaxation: Relaxation::default(),
            coef_tol: 1e-6,
            obj_tol: 1e-6,
            max_outer: 1_000_000,
            inner_tol: 1e-8,
            inner_max: 100_000,
            descent_check: true,
            surrogate: SurrogateKind::Auto,
            region_radius: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(MistError::Validation(format!("{name} must be positive, got {v}")))
            }
        };
        positive("coef_tol", self.coef_tol)?;
        positive("obj_tol", self.obj_tol)?;
        positive("inner_tol", self.inner_tol)?;
        if let StepSize::Fixed(w) = self.step_omega {
            positive("step_omega", w)?;
        }
        if let Some(r) = self.region_radius {
            positive("region_radius", r)?;
        }
        if self.max_outer == 0 || self.inner_max == 0 {
            return Err(MistError::Validation("iteration caps must be at least 1".into()));
        }
        self.relaxation.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    CoefTol,
    ObjTol,
    MaxIter,
}

impl Termination {
    pub fn converged(self) -> bool {
        self != Termination::MaxIter
    }

    pub fn name(self) -> &'static str {
        match self {
            Termination::CoefTol => "CoefTol",
            Termination::ObjTol => "ObjTol",
            Termination::MaxIter => "MaxIter",
        }
    }
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub coef: CoefficientVector,
    pub objective: f64,
    /// Objective at the start followed by one entry per outer iteration.
    pub trace: Vec<f64>,
    pub outer_iters: usize,
    /// Applications of the MM map, including retries and acceleration probes.
    pub map_evals: usize,
    pub kkt_residual: f64,
    pub termination: Termination,
    /// Step halvings spent by the descent safeguard.
    pub step_halvings: usize,
}

#[derive(Serialize, Deserialize)]
struct FitResultJson {
    coef: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    intercept: Option<f64>,
    objective: f64,
    iters: usize,
    map_evals: usize,
    kkt: f64,
    termination: Termination,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    trace: Option<Vec<f64>>,
}

impl FitResult {
    pub fn to_json(&self, with_trace: bool) -> Result<String> {
        let dto = FitResultJson {
            coef: self.coef.beta.as_slice().to_vec(),
            intercept: self.coef.intercept,
            objective: self.objective,
            iters: self.outer_iters,
            map_evals: self.map_evals,
            kkt: self.kkt_residual,
            termination: self.termination,
            trace: with_trace.then(|| self.trace.clone()),
        };
        serde_json::to_string(&dto).map_err(|e| MistError::Validation(e.to_string()))
    }

    /// Inverse of [`FitResult::to_json`]. Without a stored trace the trace is
    /// the final objective alone; step halvings are not serialized.
    pub fn from_json(s: &str) -> Result<Self> {
        let dto: FitResultJson =
            serde_json::from_str(s).map_err(|e| MistError::Validation(e.to_string()))?;
        Ok(FitResult {
            coef: CoefficientVector::new(dto.intercept, dto.coef),
            objective: dto.objective,
            trace: dto.trace.unwrap_or_else(|| vec![dto.objective]),
            outer_iters: dto.iters,
            map_evals: dto.map_evals,
            kkt_residual: dto.kkt,
            termination: dto.termination,
            step_halvings: 0,
        })
    }
}

/// A fidelity model paired with a penalty. The intercept is never penalized.
#[derive(Clone, Debug)]
pub struct Problem {
    pub model: Arc<FidelityModel>,
    pub penalty: PenaltySpec,
}

impl Problem {
    pub fn new(model: impl Into<Arc<FidelityModel>>, penalty: PenaltySpec) -> Result<Self> {
        let model = model.into();
        penalty.validate()?;
        if let Some(n) = penalty.weight_len() {
            check_len(model.p(), n)?;
        }
        Ok(Problem { model, penalty })
    }

    /// Same model, different penalty.
    pub fn with_penalty(&self, penalty: PenaltySpec) -> Result<Self> {
        Problem::new(Arc::clone(&self.model), penalty)
    }

    pub(crate) fn offset(&self) -> usize {
        usize::from(self.model.has_intercept())
    }

    fn check_coef(&self, coef: &CoefficientVector) -> Result<()> {
        check_len(self.model.p(), coef.beta.len())?;
        if coef.intercept.is_some() != self.model.has_intercept() {
            return Err(MistError::Validation(
                "coefficient intercept presence disagrees with the design".into(),
            ));
        }
        Ok(())
    }

    pub(crate) fn weight(&self, j: usize) -> f64 {
        self.penalty.weights.as_ref().map_or(1.0, |w| w[j])
    }

    /// `ξ` in full layout.
    pub(crate) fn objective_full(&self, theta: &DVector<f64>) -> Result<f64> {
        let pen = self.penalty.total_unchecked(&theta.as_slice()[self.offset()..]);
        Ok(self.model.neg_loglik_full(theta)? + pen)
    }

    /// `ξ(β̃) = -ℓ(β̃) + Σ_j p(|β_j|; λ_j) + λ ε ‖β‖²`.
    pub fn total_objective(&self, coef: &CoefficientVector) -> Result<f64> {
        self.check_coef(coef)?;
        self.objective_full(&coef.to_full())
    }

    pub(crate) fn kkt_full(&self, theta: &DVector<f64>) -> Result<f64> {
        let grad = self.model.gradient_full(theta)?;
        let off = self.offset();
        let ridge = 2.0 * self.penalty.lambda * self.penalty.epsilon;
        let mut worst: f64 = 0.0;
        if off == 1 {
            worst = grad[0].abs();
        }
        for j in 0..self.model.p() {
            let b = theta[off + j];
            let s = -grad[off + j] + ridge * b;
            let w = self.weight(j);
            let slope = self.penalty.derivative_unchecked(w, b.abs());
            let r = if b != 0.0 {
                (s + slope * b.signum()).abs()
            } else {
                (s.abs() - slope).max(0.0)
            };
            worst = worst.max(r);
        }
        Ok(worst)
    }

    /// Largest violation of the first-order stationarity conditions; zero
    /// exactly at stationary points.
    pub fn kkt_residual(&self, coef: &CoefficientVector) -> Result<f64> {
        self.check_coef(coef)?;
        self.kkt_full(&coef.to_full())
    }

    /// Coordinates (full layout) pinned at zero by an infinite weight.
    pub(crate) fn pinned(&self) -> Vec<usize> {
        match &self.penalty.weights {
            Some(w) => w
                .iter()
                .enumerate()
                .filter(|(_, w)| w.is_infinite())
                .map(|(j, _)| j + self.offset())
                .collect(),
            None => Vec::new(),
        }
    }

    pub(crate) fn prepare_start(&self, start: &CoefficientVector) -> Result<DVector<f64>> {
        self.check_coef(start)?;
        if !start.is_finite() {
            return Err(MistError::Domain("start contains non-finite values".into()));
        }
        let mut theta = start.to_full();
        for j in self.pinned() {
            theta[j] = 0.0;
        }
        Ok(theta)
    }
}
