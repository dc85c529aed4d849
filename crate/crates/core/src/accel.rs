//! SQUAREM extrapolation of an MM map.
//!
//! From `θ` two map applications give `r = M(θ) − θ` and
//! `v = M(M(θ)) − 2M(θ) + θ`; the proposal is `θ − 2γr + γ²v` with
//! `γ = −‖r‖/‖v‖`, backtracked toward the plain double step `γ = −1` while it
//! increases the objective. Fits follow each accepted extrapolation with
//! one plain map application.

use std::cell::{Cell, RefCell};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{MistError, Result};
use crate::fidelity::CoefficientVector;
use crate::solver::{
    descent_step, finish, fit, map_stepper, objective_settled, Problem, SolverConfig, Termination, DESCENT_SLACK,
};
use crate::FitResult;

/// Maximum number of backtracking probes per extrapolation.
pub const MAX_BACKTRACKS: usize = 5;
/// `‖r‖` at or below this is treated as a fixed point.
pub const FIXED_POINT_TOL: f64 = 1e-14;

/// How the accepted point of a step was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Accepted {
    /// `θ` itself; the map did not move it.
    FixedPoint,
    /// An extrapolated proposal.
    Extrapolated,
    /// The plain double step `M(M(θ))`.
    DoubleStep,
}

#[derive(Clone, Debug)]
pub struct AccelState {
    /// Accepted point.
    pub theta: DVector<f64>,
    pub objective: f64,
    pub r: DVector<f64>,
    pub v: DVector<f64>,
    /// Steplength of the accepted proposal; `−1` for the double step.
    pub gamma: f64,
    /// Map applications: the two probes plus one per backtrack.
    pub map_evals: usize,
    pub backtracks: usize,
    pub accepted: Accepted,
    /// `M(M(θ))` and its objective.
    pub double_step: DVector<f64>,
    pub double_step_objective: f64,
}

/// One safeguarded SQUAREM step from `theta`.
pub fn squarem_step<M, F>(mut map: M, mut objective: F, theta: &DVector<f64>) -> Result<AccelState>
where
    M: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
    F: FnMut(&DVector<f64>) -> Result<f64>,
{
    let base = objective(theta)?;
    let m1 = map(theta)?;
    let m2 = map(&m1)?;
    let r = &m1 - theta;
    let v = &m2 - &m1 * 2.0 + theta;
    let m2_obj = objective(&m2)?;
    let state = |theta: DVector<f64>, objective, gamma, map_evals, backtracks, accepted| AccelState {
        theta,
        objective,
        r: r.clone(),
        v: v.clone(),
        gamma,
        map_evals,
        backtracks,
        accepted,
        double_step: m2.clone(),
        double_step_objective: m2_obj,
    };
    let r_norm = r.norm();
    if r_norm <= FIXED_POINT_TOL {
        return Ok(state(theta.clone(), base, -1.0, 2, 0, Accepted::FixedPoint));
    }
    let v_norm = v.norm();
    if v_norm == 0.0 {
        return Ok(state(m2.clone(), m2_obj, -1.0, 2, 0, Accepted::DoubleStep));
    }
    let mut gamma = (-r_norm / v_norm).min(-1.0);
    let mut backtracks = 0;
    loop {
        if gamma == -1.0 {
            return Ok(state(m2.clone(), m2_obj, -1.0, 2 + backtracks, backtracks, Accepted::DoubleStep));
        }
        let proposal = theta - &r * (2.0 * gamma) + &v * (gamma * gamma);
        match objective(&proposal) {
            Ok(val) if val <= base + DESCENT_SLACK => {
                return Ok(state(proposal, val, gamma, 2 + backtracks, backtracks, Accepted::Extrapolated));
            }
            Ok(_) | Err(MistError::Overflow { .. }) => {}
            Err(e) => return Err(e),
        }
        if backtracks == MAX_BACKTRACKS {
            return Ok(state(m2.clone(), m2_obj, -1.0, 2 + backtracks, backtracks, Accepted::DoubleStep));
        }
        backtracks += 1;
        gamma = 0.5 * (gamma - 1.0);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccelMode {
    #[default]
    Plain,
    Squarem,
}

impl AccelMode {
    pub fn name(self) -> &'static str {
        match self {
            AccelMode::Plain => "plain",
            AccelMode::Squarem => "squarem",
        }
    }
}

impl std::fmt::Display for AccelMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for AccelMode {
    type Err = MistError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "plain" | "none" => Ok(AccelMode::Plain),
            "squarem" | "sqm" => Ok(AccelMode::Squarem),
            _ => Err(MistError::Validation(format!("unknown acceleration mode '{s}'"))),
        }
    }
}

/// Objective values of recently visited points, so that map outputs are
/// not re-evaluated when the step asks for their objective.
#[derive(Default)]
struct ObjectiveCache {
    entries: Vec<(DVector<f64>, f64)>,
}

impl ObjectiveCache {
    const CAPACITY: usize = 6;

    fn get(&self, theta: &DVector<f64>) -> Option<f64> {
        self.entries.iter().rev().find(|(t, _)| t == theta).map(|(_, v)| *v)
    }

    fn put(&mut self, theta: DVector<f64>, value: f64) {
        if self.entries.len() == Self::CAPACITY {
            self.entries.remove(0);
        }
        self.entries.push((theta, value));
    }
}

/// Runs the base fit (`Plain`) or iterates [`squarem_step`] over the same
/// single-map update (`Squarem`) under the same stopping rules. An accepted
/// extrapolation is followed by one map application, counted in
/// `map_evals`, so every returned point is a map output.
pub fn accelerated_fit(
    problem: &Problem,
    config: &SolverConfig,
    start: &CoefficientVector,
    mode: AccelMode,
) -> Result<FitResult> {
    if mode == AccelMode::Plain {
        return fit(problem, config, start);
    }
    let stepper = RefCell::new(map_stepper(problem, config)?);
    let cache = RefCell::new(ObjectiveCache::default());
    let halvings = Cell::new(0usize);

    let objective = |theta: &DVector<f64>| -> Result<f64> {
        if let Some(v) = cache.borrow().get(theta) {
            return Ok(v);
        }
        let v = problem.objective_full(theta)?;
        cache.borrow_mut().put(theta.clone(), v);
        Ok(v)
    };
    let map = |theta: &DVector<f64>| -> Result<DVector<f64>> {
        let base = objective(theta)?;
        let step = descent_step(
            problem,
            &mut **stepper.borrow_mut(),
            theta,
            base,
            config.descent_check,
        )?;
        halvings.set(halvings.get() + step.halvings);
        cache.borrow_mut().put(step.theta.clone(), step.objective);
        Ok(step.theta)
    };

    let mut theta = problem.prepare_start(start)?;
    let mut obj = objective(&theta)?;
    if !obj.is_finite() {
        return Err(MistError::Domain("objective is not finite at the start".into()));
    }
    let mut trace = vec![obj];
    let mut map_evals = 0;
    let mut iters = 0;
    let mut termination = Termination::MaxIter;
    while iters < config.max_outer {
        iters += 1;
        let state = squarem_step(map, objective, &theta)?;
        map_evals += state.map_evals;
        let settled = state.r.norm() < config.coef_tol;
        let (next, next_obj) = if settled {
            // M(θ) is within tolerance of θ: end on the double step
            (state.double_step, state.double_step_objective)
        } else if state.accepted == Accepted::Extrapolated {
            // one more map damps the components the extrapolation amplified
            let stabilized = map(&state.theta)?;
            map_evals += 1;
            let value = objective(&stabilized)?;
            (stabilized, value)
        } else {
            (state.theta, state.objective)
        };
        let moved = (&next - &theta).norm();
        let dropped = (obj - next_obj).abs();
        theta = next;
        obj = next_obj;
        trace.push(obj);
        if settled || state.accepted == Accepted::FixedPoint || moved < config.coef_tol {
            termination = Termination::CoefTol;
            break;
        }
        if objective_settled(dropped, config.obj_tol) {
            termination = Termination::ObjTol;
            break;
        }
    }
    let extra = halvings.get();
    finish(problem, theta, trace, iters, map_evals + extra, extra, termination)
}
