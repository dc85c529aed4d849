//! Componentwise minimization of the separable Poisson surrogate
//! `k_j(b; α_j) + λ ε b² + τ_j |b|`.

use nalgebra::DVector;

use super::engine::Stepper;
use super::Problem;
use crate::error::{MistError, Result};
use crate::fidelity::PoissonMajorizer;

const MAX_DOUBLINGS: usize = 200;
const MAX_BISECTIONS: usize = 200;
const ROOT_TOL: f64 = 1e-13;

pub(crate) struct PoissonStepper<'a> {
    problem: &'a Problem,
    majorizer: PoissonMajorizer<'a>,
    /// Thresholds held fixed across applications (full layout); recomputed
    /// from each iterate when absent.
    fixed_tau: Option<DVector<f64>>,
}

impl<'a> PoissonStepper<'a> {
    pub fn new(problem: &'a Problem, fixed_tau: Option<DVector<f64>>) -> Result<Self> {
        Ok(PoissonStepper {
            problem,
            majorizer: PoissonMajorizer::new(&problem.model)?,
            fixed_tau,
        })
    }
}

impl Stepper for PoissonStepper<'_> {
    fn apply(&mut self, theta: &DVector<f64>, scale: f64) -> Result<DVector<f64>> {
        let problem = self.problem;
        let off = problem.offset();
        let eta = problem.model.design().linear_predictor(theta);
        let computed;
        let tau_pen: &[f64] = match &self.fixed_tau {
            Some(t) => &t.as_slice()[off..],
            None => {
                computed = problem.penalty.thresholds_unchecked(&theta.as_slice()[off..]);
                computed.as_slice()
            }
        };
        let ridge = problem.penalty.lambda * problem.penalty.epsilon;
        let mut out = theta.clone();
        for k in 0..theta.len() {
            let (tau, c) = if k < off { (0.0, 0.0) } else { (tau_pen[k - off], ridge) };
            let target = if tau.is_infinite() {
                0.0
            } else {
                minimize_coordinate(&self.majorizer, &eta, theta[k], k, tau, c)?
            };
            out[k] = theta[k] + scale * (target - theta[k]);
        }
        Ok(out)
    }
}

/// Minimizes `φ(b) = k_j(b; α_j) + c b² + τ|b|`, a strictly convex function
/// with a kink at zero. The sign of the one-sided slopes at zero selects the
/// half-line; the root of the smooth derivative there is bracketed by
/// doubling and polished by Newton steps that fall back to bisection.
fn minimize_coordinate(
    maj: &PoissonMajorizer<'_>,
    eta: &DVector<f64>,
    alpha: f64,
    j: usize,
    tau: f64,
    c: f64,
) -> Result<f64> {
    if !maj.column_is_active(j) {
        return Ok(if tau > 0.0 || c > 0.0 { 0.0 } else { alpha });
    }
    let fail = |reason: String| MistError::ScalarSolver {
        coordinate: j,
        reason,
    };
    let phi = |b: f64| {
        let (v, d1, d2) = maj.component_at(eta, alpha, j, b);
        (v + c * b * b + tau * b.abs(), d1 + 2.0 * c * b, d2 + 2.0 * c)
    };
    let (_, slope0, _) = phi(0.0);
    if slope0.is_nan() {
        return Err(fail("derivative at zero is undefined".into()));
    }
    if slope0.abs() <= tau {
        return Ok(0.0);
    }
    // Work on t = s·b > 0 where H(t) = s·(k'(s t) + 2c s t) + τ is increasing.
    let s = if slope0 < -tau { 1.0 } else { -1.0 };
    let h = |t: f64| {
        let (_, d1, d2) = phi(s * t);
        (s * d1 + tau, d2)
    };

    let mut lo = 0.0;
    let mut hi = (s * alpha).max(1e-2);
    let mut doublings = 0;
    loop {
        let (v, _) = h(hi);
        if v.is_nan() || v >= 0.0 {
            break;
        }
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        if doublings > MAX_DOUBLINGS {
            return Err(fail(format!("no sign change found up to |b| = {hi:e}")));
        }
    }

    let mut t = if s * alpha > lo && s * alpha < hi { s * alpha } else { 0.5 * (lo + hi) };
    let mut solved = false;
    for _ in 0..MAX_BISECTIONS {
        let (v, dv) = h(t);
        if v == 0.0 {
            solved = true;
            break;
        }
        if v.is_nan() || v > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        let newton = t - v / dv;
        let next = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        let step = (next - t).abs();
        t = next;
        if step <= ROOT_TOL * t.abs().max(1.0) || hi - lo <= ROOT_TOL * hi.max(1.0) {
            solved = true;
            break;
        }
    }
    if !solved {
        return Err(fail(format!("root not isolated within [{lo:e}, {hi:e}]")));
    }
    let (_, curvature) = h(t);
    if !(curvature > 0.0) {
        // e^u underflowed: the infimum lies at infinity
        return Err(fail(format!("no finite minimizer (flat beyond |b| = {t:e})")));
    }
    let b = s * t;
    let (at_b, _, _) = phi(b);
    let (at_alpha, _, _) = phi(alpha);
    // rounding can leave the polished root marginally worse than the start
    Ok(if at_b.is_finite() && (at_b <= at_alpha || !at_alpha.is_finite()) {
        b
    } else {
        alpha
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fidelity::{CoefficientVector, DesignMatrix, FidelityModel, Response};
    use crate::penalty::PenaltySpec;

    fn problem(rows: &[Vec<f64>], y: Vec<f64>, intercept: bool, penalty: PenaltySpec) -> Problem {
        let model = FidelityModel::new(
            DesignMatrix::from_rows(rows, intercept).unwrap(),
            Response::poisson(y, None),
        )
        .unwrap();
        Problem::new(model, penalty).unwrap()
    }

    #[test]
    fn single_observation_unpenalized() {
        let p = problem(&[vec![1.0]], vec![1.0], false, PenaltySpec::lasso(1e-300));
        let maj = PoissonMajorizer::new(&p.model).unwrap();
        let eta = DVector::from_element(1, 0.7);
        let b = minimize_coordinate(&maj, &eta, 0.7, 0, 0.0, 0.0).unwrap();
        assert!(b.abs() < 1e-12, "{b}");
    }

    #[test]
    fn dead_zone_and_pinning() {
        let p = problem(&[vec![1.0], vec![2.0]], vec![1.0, 0.0], false, PenaltySpec::lasso(1.0));
        let maj = PoissonMajorizer::new(&p.model).unwrap();
        let eta = DVector::zeros(2);
        // slope at zero: (1 − 1)·1 + (1 − 0)·2 = 2
        assert_eq!(minimize_coordinate(&maj, &eta, 0.0, 0, 2.5, 0.0).unwrap(), 0.0);
        let b = minimize_coordinate(&maj, &eta, 0.0, 0, 1.0, 0.0).unwrap();
        assert!(b < 0.0);
        // stationarity on the negative half-line
        let (_, d1, _) = maj.component_at(&eta, 0.0, 0, b);
        assert!((d1 - 1.0).abs() < 1e-10);
    }

    #[test]
    fn unbounded_direction_reports_coordinate() {
        let p = problem(&[vec![1.0], vec![1.0]], vec![0.0, 0.0], false, PenaltySpec::lasso(1.0));
        let maj = PoissonMajorizer::new(&p.model).unwrap();
        let eta = DVector::zeros(2);
        match minimize_coordinate(&maj, &eta, 0.0, 0, 0.0, 0.0) {
            Err(MistError::ScalarSolver { coordinate, .. }) => assert_eq!(coordinate, 0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn step_decreases_surrogate() {
        let rows = vec![vec![0.5, -1.0], vec![1.5, 0.3], vec![-0.2, 0.8], vec![1.0, 1.0]];
        let p = problem(&rows, vec![2.0, 5.0, 0.0, 3.0], true, PenaltySpec::lasso(0.3).with_epsilon(0.5));
        let maj = PoissonMajorizer::new(&p.model).unwrap();
        let alpha = CoefficientVector::new(Some(0.2), vec![0.1, -0.3]);
        let mut stepper = PoissonStepper::new(&p, None).unwrap();
        let next = stepper.apply(&alpha.to_full(), 1.0).unwrap();
        let next = CoefficientVector::from_full(&next, true);
        let sur = |b: &CoefficientVector| {
            maj.total(&alpha, b).unwrap()
                + p.penalty.total_unchecked(b.beta.as_slice())
        };
        assert!(sur(&next) <= sur(&alpha) + 1e-12);
        assert!(p.total_objective(&next).unwrap() <= p.total_objective(&alpha).unwrap());
    }
}
