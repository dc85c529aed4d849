//! Soft-thresholding and the inner iterated soft-thresholding solver.

use nalgebra::DVector;

use super::Relaxation;
use crate::error::{check_len, MistError, Result};

/// `sign(u) · max(|u| − v, 0)`; an infinite threshold maps everything to 0.
#[inline]
pub fn soft_threshold(u: f64, v: f64) -> f64 {
    debug_assert!(v >= 0.0, "negative threshold {v}");
    let shrunk = u.abs() - v;
    if shrunk > 0.0 {
        u.signum() * shrunk
    } else {
        0.0
    }
}

/// Componentwise [`soft_threshold`].
pub fn soft_threshold_vec(u: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
    check_len(u.len(), v.len())?;
    if v.iter().any(|t| !(*t >= 0.0)) {
        return Err(MistError::Domain("thresholds must be nonnegative".into()));
    }
    Ok(u.zip_map(v, soft_threshold))
}

#[derive(Clone, Debug)]
pub struct IstOutcome {
    pub solution: DVector<f64>,
    pub iterations: usize,
    /// Norm of the last update.
    pub last_step: f64,
}

/// Minimizes `m(b) + Σ_j τ_j |b_j|` for a smooth strictly convex `m` by
/// iterating
///
/// ```text
/// d = b − ϖ ∇m(b)
/// b ← b + δ_n (S(d; ϖτ) − b)
/// ```
///
/// until successive iterates are within `inner_tol`. Convergence needs
/// `ϖ < 2 / L` where `L` is the Lipschitz constant of `∇m`.
pub fn ist_minimize<F>(
    mut grad_m: F,
    tau: &DVector<f64>,
    omega: f64,
    b0: &DVector<f64>,
    relaxation: &Relaxation,
    inner_tol: f64,
    inner_max: usize,
) -> Result<IstOutcome>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    check_len(b0.len(), tau.len())?;
    if !(omega > 0.0 && omega.is_finite()) {
        return Err(MistError::Validation(format!("step must be positive, got {omega}")));
    }
    let levels = tau * omega;
    let mut b = b0.clone();
    let mut last_step = f64::INFINITY;
    for n in 1..=inner_max {
        let grad = grad_m(&b)?;
        check_len(b.len(), grad.len())?;
        let delta = relaxation.at(n);
        let mut step_sq = 0.0;
        for j in 0..b.len() {
            let target = soft_threshold(b[j] - omega * grad[j], levels[j]);
            let next = b[j] + delta * (target - b[j]);
            step_sq += (next - b[j]) * (next - b[j]);
            b[j] = next;
        }
        last_step = step_sq.sqrt();
        if !last_step.is_finite() {
            return Err(MistError::Domain("inner iterate diverged".into()));
        }
        if last_step <= inner_tol {
            return Ok(IstOutcome {
                solution: b,
                iterations: n,
                last_step,
            });
        }
    }
    Err(MistError::InnerMaxIter {
        iterations: inner_max,
        residual: last_step,
        iterate: b,
    })
}
