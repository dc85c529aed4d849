use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::ist::{ist_minimize, soft_threshold};
use super::poisson::PoissonStepper;
use super::{
    FitResult, Problem, SolverConfig, StepSize, SurrogateKind, Termination, AUTO_STEP_SAFETY,
    DESCENT_SLACK, MAX_HALVINGS,
};
use crate::error::{MistError, Result};
use crate::fidelity::{CoefficientVector, Family};

/// One application of an MM map. `scale ∈ (0, 1]` shortens the step when
/// the descent safeguard retries.
pub(crate) trait Stepper {
    fn apply(&mut self, theta: &DVector<f64>, scale: f64) -> Result<DVector<f64>>;
}

pub(crate) struct StepOutcome {
    pub theta: DVector<f64>,
    pub objective: f64,
    pub halvings: usize,
    /// The safeguard could not find a decrease and kept the old iterate.
    pub stalled: bool,
}

/// Applies `stepper` once, halving the step until the objective does not
/// increase. Increases below `1e-9·max(1, |ξ|)` that survive every halving
/// are rounding noise at a stationary point, so the old iterate is kept.
pub(crate) fn descent_step(
    problem: &Problem,
    stepper: &mut dyn Stepper,
    theta: &DVector<f64>,
    objective: f64,
    descent_check: bool,
) -> Result<StepOutcome> {
    let mut scale = 1.0;
    let mut halvings = 0;
    loop {
        let attempt = stepper
            .apply(theta, scale)
            .and_then(|cand| problem.objective_full(&cand).map(|v| (cand, v)));
        let increase = match attempt {
            Ok((cand, v)) if !descent_check || v <= objective + DESCENT_SLACK => {
                return Ok(StepOutcome {
                    theta: cand,
                    objective: v,
                    halvings,
                    stalled: false,
                });
            }
            Ok((_, v)) if v.is_nan() => f64::INFINITY,
            Ok((_, v)) => v - objective,
            Err(MistError::Overflow { .. }) if descent_check => f64::INFINITY,
            Err(e) => return Err(e),
        };
        if halvings == MAX_HALVINGS {
            if increase <= 1e-9 * objective.abs().max(1.0) {
                return Ok(StepOutcome {
                    theta: theta.clone(),
                    objective,
                    halvings,
                    stalled: true,
                });
            }
            return Err(MistError::DescentFailure { halvings, increase });
        }
        scale *= 0.5;
        halvings += 1;
    }
}

/// `|Δξ| < obj_tol`, except that a change that rounds to exactly zero says
/// nothing about convergence and leaves the decision to the coefficients.
pub(crate) fn objective_settled(dropped: f64, obj_tol: f64) -> bool {
    dropped > 0.0 && dropped < obj_tol
}

/// Runs `θ ← M(θ)` until successive iterates or objectives are within
/// tolerance, or the iteration cap is hit.
fn run(
    problem: &Problem,
    config: &SolverConfig,
    stepper: &mut dyn Stepper,
    start: DVector<f64>,
) -> Result<FitResult> {
    let mut theta = start;
    let mut objective = problem.objective_full(&theta)?;
    if !objective.is_finite() {
        return Err(MistError::Domain("objective is not finite at the start".into()));
    }
    let mut trace = vec![objective];
    let mut map_evals = 0;
    let mut step_halvings = 0;
    let mut termination = Termination::MaxIter;
    let mut outer_iters = 0;
    while outer_iters < config.max_outer {
        outer_iters += 1;
        let step = descent_step(problem, stepper, &theta, objective, config.descent_check)?;
        map_evals += 1 + step.halvings;
        step_halvings += step.halvings;
        let moved = (&step.theta - &theta).norm();
        let dropped = (objective - step.objective).abs();
        theta = step.theta;
        objective = step.objective;
        trace.push(objective);
        if step.stalled || moved < config.coef_tol {
            termination = Termination::CoefTol;
            break;
        }
        if objective_settled(dropped, config.obj_tol) {
            termination = Termination::ObjTol;
            break;
        }
    }
    finish(problem, theta, trace, outer_iters, map_evals, step_halvings, termination)
}

pub(crate) fn finish(
    problem: &Problem,
    theta: DVector<f64>,
    trace: Vec<f64>,
    outer_iters: usize,
    map_evals: usize,
    step_halvings: usize,
    termination: Termination,
) -> Result<FitResult> {
    let kkt_residual = problem.kkt_full(&theta)?;
    Ok(FitResult {
        coef: CoefficientVector::from_full(&theta, problem.model.has_intercept()),
        objective: *trace.last().expect("trace starts with the initial objective"),
        trace,
        outer_iters,
        map_evals,
        kkt_residual,
        termination,
        step_halvings,
    })
}

/// `λ*` for the quadratic update, with a Poisson region bound when a radius
/// is configured.
fn curvature(problem: &Problem, config: &SolverConfig) -> Result<f64> {
    match (problem.model.family(), config.region_radius) {
        (Family::Poisson, Some(r)) => problem.model.curvature_bound_in_region(r),
        _ => problem.model.curvature_bound(),
    }
}

/// Step for a map whose smooth part has curvature at most `bound`: the
/// configured constant if it is admissible, otherwise `0.95·2/bound`.
fn admissible_step(step: StepSize, bound: f64) -> Result<f64> {
    let limit = 2.0 / bound;
    match step {
        StepSize::Auto if bound > 0.0 => Ok(AUTO_STEP_SAFETY * limit),
        StepSize::Auto => Ok(1.0),
        StepSize::Fixed(w) if w > 0.0 && w <= limit * (1.0 + 1e-12) => Ok(w),
        StepSize::Fixed(w) => Err(MistError::Validation(format!(
            "step {w} outside (0, {limit}] for curvature bound {bound}"
        ))),
    }
}

/// The outer step `ϖ` for the quadratic surrogate: `0.95·2/λ*` when automatic.
pub fn resolve_step(problem: &Problem, config: &SolverConfig) -> Result<f64> {
    config.validate()?;
    admissible_step(config.step_omega, curvature(problem, config)?)
}

/// Closed-form minimizer of the strictly majorizing quadratic surrogate:
/// `β₀ ← α₀ + (ϖ/2)[∇ℓ]₀`, `β ← S(α + (ϖ/2)[∇ℓ]_A; (ϖ/2)τ) / (1 + ϖλε)`.
struct GlmStepper<'a> {
    problem: &'a Problem,
    omega: f64,
}

impl Stepper for GlmStepper<'_> {
    fn apply(&mut self, theta: &DVector<f64>, scale: f64) -> Result<DVector<f64>> {
        let w = self.omega * scale;
        let problem = self.problem;
        let off = problem.offset();
        let eval = problem.model.eval_full(theta)?;
        let tau = problem.penalty.thresholds_unchecked(&theta.as_slice()[off..]);
        if cfg!(debug_assertions) {
            let pen = problem.penalty.total_unchecked(&theta.as_slice()[off..]);
            let touch = surrogate_value(problem, w, theta, eval.neg_loglik, &eval.grad, &tau, theta);
            let obj = eval.neg_loglik + pen;
            debug_assert!(
                (touch - obj).abs() <= 1e-9 * obj.abs().max(1.0),
                "surrogate {touch} does not touch objective {obj}"
            );
        }
        let shrink = 1.0 / (1.0 + w * problem.penalty.lambda * problem.penalty.epsilon);
        let mut out = theta.clone();
        if off == 1 {
            out[0] = theta[0] + 0.5 * w * eval.grad[0];
        }
        for j in 0..problem.model.p() {
            let k = off + j;
            out[k] = shrink * soft_threshold(theta[k] + 0.5 * w * eval.grad[k], 0.5 * w * tau[j]);
        }
        Ok(out)
    }
}

/// `−ℓ(α) − ∇ℓ(α)ᵀ(β−α) + ϖ⁻¹‖β−α‖² + Σ_j (τ_j|β_j| + γ_j + λεβ_j²)` with
/// `γ_j = p(|α_j|) − τ_j|α_j|`.
fn surrogate_value(
    problem: &Problem,
    omega: f64,
    alpha: &DVector<f64>,
    neg_loglik: f64,
    grad: &DVector<f64>,
    tau: &DVector<f64>,
    beta: &DVector<f64>,
) -> f64 {
    let off = problem.offset();
    let diff = beta - alpha;
    let mut total = neg_loglik - grad.dot(&diff) + diff.norm_squared() / omega;
    let ridge = problem.penalty.lambda * problem.penalty.epsilon;
    for j in 0..problem.model.p() {
        let (a, b) = (alpha[off + j], beta[off + j]);
        let w = problem.weight(j);
        let linear = |x: f64| if x == 0.0 { 0.0 } else { tau[j] * x.abs() };
        let gamma = problem.penalty.value_unchecked(w, a.abs()) - linear(a);
        total += linear(b) + gamma + ridge * b * b;
    }
    total
}

/// The strictly majorizing surrogate `ξ^SUR(β̃, α̃)` with step `omega`.
pub fn glm_surrogate(
    problem: &Problem,
    omega: f64,
    alpha: &CoefficientVector,
    beta: &CoefficientVector,
) -> Result<f64> {
    problem.check_coef(alpha)?;
    problem.check_coef(beta)?;
    let a = alpha.to_full();
    let eval = problem.model.eval_full(&a)?;
    let tau = problem.penalty.thresholds_unchecked(&a.as_slice()[problem.offset()..]);
    Ok(surrogate_value(problem, omega, &a, eval.neg_loglik, &eval.grad, &tau, &beta.to_full()))
}

/// The penalty linearized at the current iterate (`h = 0`); the convex
/// surrogate `−ℓ(β̃) + λε‖β‖² + Σ τ_j|β_j|` is minimized by inner
/// soft-thresholding.
struct LlaStepper<'a> {
    problem: &'a Problem,
    config: &'a SolverConfig,
    inner_omega: f64,
}

impl Stepper for LlaStepper<'_> {
    fn apply(&mut self, theta: &DVector<f64>, scale: f64) -> Result<DVector<f64>> {
        let tau = full_thresholds(self.problem, theta);
        let target = lla_minimize(self.problem, self.config, self.inner_omega, &tau, theta)?;
        Ok(theta + (target - theta) * scale)
    }
}

fn full_thresholds(problem: &Problem, theta: &DVector<f64>) -> DVector<f64> {
    let off = problem.offset();
    let pen = problem.penalty.thresholds_unchecked(&theta.as_slice()[off..]);
    let mut tau = DVector::zeros(theta.len());
    tau.rows_mut(off, pen.len()).copy_from(&pen);
    tau
}

fn lla_minimize(
    problem: &Problem,
    config: &SolverConfig,
    inner_omega: f64,
    tau: &DVector<f64>,
    start: &DVector<f64>,
) -> Result<DVector<f64>> {
    let off = problem.offset();
    let ridge = 2.0 * problem.penalty.lambda * problem.penalty.epsilon;
    let grad_m = |b: &DVector<f64>| {
        let mut g = -problem.model.gradient_full(b)?;
        for k in off..b.len() {
            g[k] += ridge * b[k];
        }
        Ok(g)
    };
    Ok(ist_minimize(
        grad_m,
        tau,
        inner_omega,
        start,
        &config.relaxation,
        config.inner_tol,
        config.inner_max,
    )?
    .solution)
}

fn lla_inner_step(problem: &Problem, config: &SolverConfig) -> Result<f64> {
    let bound = problem.model.curvature_bound()?
        + 2.0 * problem.penalty.lambda * problem.penalty.epsilon;
    admissible_step(config.step_omega, bound)
}

/// The quadratic surrogate minimized by inner soft-thresholding rather than
/// in closed form.
struct QuadraticStepper<'a> {
    problem: &'a Problem,
    config: &'a SolverConfig,
    omega: f64,
}

impl Stepper for QuadraticStepper<'_> {
    fn apply(&mut self, theta: &DVector<f64>, scale: f64) -> Result<DVector<f64>> {
        let problem = self.problem;
        let off = problem.offset();
        let w = self.omega * scale;
        let grad = problem.model.gradient_full(theta)?;
        let tau = full_thresholds(problem, theta);
        let ridge = 2.0 * problem.penalty.lambda * problem.penalty.epsilon;
        let grad_m = |b: &DVector<f64>| {
            let mut g = (b - theta) * (2.0 / w) - &grad;
            for k in off..b.len() {
                g[k] += ridge * b[k];
            }
            Ok(g)
        };
        let inner = 1.0 / (2.0 / w + ridge);
        Ok(ist_minimize(
            grad_m,
            &tau,
            inner,
            theta,
            &self.config.relaxation,
            self.config.inner_tol,
            self.config.inner_max,
        )?
        .solution)
    }
}

fn uses_quadratic(problem: &Problem, config: &SolverConfig) -> Result<bool> {
    let flat = problem.penalty.family.has_flat_tail();
    match config.surrogate {
        SurrogateKind::Auto => Ok(flat),
        SurrogateKind::Quadratic => Ok(true),
        SurrogateKind::Lla if flat => Err(MistError::Validation(format!(
            "{} has zero slope beyond aλ; the linearized surrogate is not strictly convex",
            problem.penalty.family
        ))),
        SurrogateKind::Lla => Ok(false),
    }
}

/// Generic MM: at each iterate the penalty is linearized (plus a quadratic
/// proximity term for SCAD/MCP) and the resulting surrogate is minimized by
/// inner soft-thresholding. Poisson models use the separable majorizer.
pub fn mm_outer(
    problem: &Problem,
    config: &SolverConfig,
    start: &CoefficientVector,
) -> Result<FitResult> {
    config.validate()?;
    if problem.model.family() == Family::Poisson {
        return poisson_mm_fit(problem, config, start);
    }
    let theta = problem.prepare_start(start)?;
    if uses_quadratic(problem, config)? {
        let omega = resolve_step(problem, config)?;
        let mut stepper = QuadraticStepper {
            problem,
            config,
            omega,
        };
        run(problem, config, &mut stepper, theta)
    } else {
        let inner_omega = lla_inner_step(problem, config)?;
        let mut stepper = LlaStepper {
            problem,
            config,
            inner_omega,
        };
        run(problem, config, &mut stepper, theta)
    }
}

/// Single soft-threshold map per iteration (closed-form minimizer of the
/// strictly majorizing surrogate).
pub fn glm_mm_fit(
    problem: &Problem,
    config: &SolverConfig,
    start: &CoefficientVector,
) -> Result<FitResult> {
    let omega = resolve_step(problem, config)?;
    let theta = problem.prepare_start(start)?;
    let mut stepper = GlmStepper { problem, omega };
    run(problem, config, &mut stepper, theta)
}

/// Componentwise minimization of the separable Poisson surrogate.
pub fn poisson_mm_fit(
    problem: &Problem,
    config: &SolverConfig,
    start: &CoefficientVector,
) -> Result<FitResult> {
    config.validate()?;
    let theta = problem.prepare_start(start)?;
    let mut stepper = PoissonStepper::new(problem, None)?;
    run(problem, config, &mut stepper, theta)
}

/// The default fit for a family: the single-map update, or the separable
/// majorizer for Poisson.
pub fn fit(problem: &Problem, config: &SolverConfig, start: &CoefficientVector) -> Result<FitResult> {
    if problem.model.family() == Family::Poisson && config.region_radius.is_none() {
        poisson_mm_fit(problem, config, start)
    } else {
        glm_mm_fit(problem, config, start)
    }
}

pub(crate) fn map_stepper<'a>(
    problem: &'a Problem,
    config: &'a SolverConfig,
) -> Result<Box<dyn Stepper + 'a>> {
    config.validate()?;
    if problem.model.family() == Family::Poisson && config.region_radius.is_none() {
        Ok(Box::new(PoissonStepper::new(problem, None)?))
    } else {
        let omega = resolve_step(problem, config)?;
        Ok(Box::new(GlmStepper { problem, omega }))
    }
}

/// One application of the single-map update from `coef`.
pub fn glm_mm_map(
    problem: &Problem,
    config: &SolverConfig,
    coef: &CoefficientVector,
) -> Result<CoefficientVector> {
    let omega = resolve_step(problem, config)?;
    let theta = problem.prepare_start(coef)?;
    let out = GlmStepper { problem, omega }.apply(&theta, 1.0)?;
    Ok(CoefficientVector::from_full(&out, problem.model.has_intercept()))
}

/// One application of the componentwise Poisson update from `coef`.
pub fn poisson_mm_map(problem: &Problem, coef: &CoefficientVector) -> Result<CoefficientVector> {
    let theta = problem.prepare_start(coef)?;
    let out = PoissonStepper::new(problem, None)?.apply(&theta, 1.0)?;
    Ok(CoefficientVector::from_full(&out, problem.model.has_intercept()))
}

/// One linearized-penalty step from the unpenalized MLE. The surrogate is
/// minimized to `inner_tol`; no further outer iterations are taken, so the
/// result reports `MaxIter`.
pub fn one_step_fit(problem: &Problem, config: &SolverConfig) -> Result<FitResult> {
    config.validate()?;
    let mle = problem.model.mle()?;
    let start = problem.prepare_start(&mle)?;
    let start_obj = problem.objective_full(&start)?;
    let tau = full_thresholds(problem, &start);
    let theta = if problem.model.family() == Family::Poisson {
        let mut stepper = PoissonStepper::new(problem, Some(tau))?;
        let mut theta = start;
        let mut converged = false;
        for _ in 0..config.inner_max {
            let next = stepper.apply(&theta, 1.0)?;
            let moved = (&next - &theta).norm();
            theta = next;
            if moved <= config.inner_tol {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(MistError::InnerMaxIter {
                iterations: config.inner_max,
                residual: f64::NAN,
                iterate: theta,
            });
        }
        theta
    } else {
        let inner_omega = lla_inner_step(problem, config)?;
        lla_minimize(problem, config, inner_omega, &tau, &start)?
    };
    let objective = problem.objective_full(&theta)?;
    finish(problem, theta, vec![start_obj, objective], 1, 1, 0, Termination::MaxIter)
}

/// Named starting points.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StartPreset {
    Zero,
    Mle,
    OneStep,
}

impl StartPreset {
    pub const ALL: [StartPreset; 3] = [StartPreset::Zero, StartPreset::Mle, StartPreset::OneStep];

    pub fn name(self) -> &'static str {
        match self {
            StartPreset::Zero => "zero",
            StartPreset::Mle => "mle",
            StartPreset::OneStep => "one-step",
        }
    }
}

impl std::fmt::Display for StartPreset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for StartPreset {
    type Err = MistError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "zero" => Ok(StartPreset::Zero),
            "mle" => Ok(StartPreset::Mle),
            "one-step" | "onestep" | "one_step" | "1s" => Ok(StartPreset::OneStep),
            _ => Err(MistError::Validation(format!("unknown start '{s}'"))),
        }
    }
}

pub fn resolve_start(
    problem: &Problem,
    config: &SolverConfig,
    preset: StartPreset,
) -> Result<CoefficientVector> {
    match preset {
        StartPreset::Zero => Ok(CoefficientVector::zeros(
            problem.model.p(),
            problem.model.has_intercept(),
        )),
        StartPreset::Mle => problem.model.mle(),
        StartPreset::OneStep => Ok(one_step_fit(problem, config)?.coef),
    }
}

/// Fits each `λ` in order, warm-starting from the last successful fit. A
/// failure is reported in place and does not stop the sweep.
pub fn lambda_path(
    problem: &Problem,
    lambdas: &[f64],
    config: &SolverConfig,
    start: &CoefficientVector,
) -> Result<Vec<Result<FitResult>>> {
    if lambdas.is_empty() {
        return Err(MistError::Validation("lambda grid is empty".into()));
    }
    if let Some(bad) = lambdas.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
        return Err(MistError::Validation(format!("lambda must be positive, got {bad}")));
    }
    let mut warm = start.clone();
    let mut out = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let result = problem
            .with_penalty(problem.penalty.clone().with_lambda(lambda))
            .and_then(|p| fit(&p, config, &warm));
        if let Ok(r) = &result {
            warm = r.coef.clone();
        }
        out.push(result);
    }
    Ok(out)
}
