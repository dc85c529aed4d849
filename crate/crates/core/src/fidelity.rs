//! Data-fidelity terms `g(β̃) = -ℓ(β̃)` for the canonical GLM families and the
//! Cox partial likelihood.
//!
//! Coefficients are handled in "full" layout internally: `[β₀, β₁, …, β_p]`
//! when the design carries an implicit intercept column, `[β₁, …, β_p]`
//! otherwise. All gradients returned here are gradients of the
//! *log*-likelihood `ℓ`, the sign convention used by the MM updates.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, MistError, Result};

/// Relative tolerance and iteration cap used when a curvature bound needs the
/// top eigenvalue of the Gram matrix.
const GRAM_TOL: f64 = 1e-10;
const GRAM_MAX_ITER: usize = 20_000;

#[derive(Clone, Debug)]
pub struct DesignMatrix {
    x: DMatrix<f64>,
    has_intercept: bool,
}

impl DesignMatrix {
    pub fn new(x: DMatrix<f64>, has_intercept: bool) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(MistError::Validation(format!(
                "design must be at least 1x1, got {}x{}",
                x.nrows(),
                x.ncols()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(MistError::Validation("design has non-finite entries".into()));
        }
        Ok(DesignMatrix { x, has_intercept })
    }

    pub fn from_rows(rows: &[Vec<f64>], has_intercept: bool) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != p) {
            return Err(MistError::DimensionMismatch {
                expected: p,
                found: bad.len(),
            });
        }
        Self::new(DMatrix::from_fn(n, p, |i, j| rows[i][j]), has_intercept)
    }

    pub fn nrows(&self) -> usize {
        self.x.nrows()
    }

    /// Number of penalized columns `p`.
    pub fn ncols(&self) -> usize {
        self.x.ncols()
    }

    /// Length of the full coefficient vector, `p` or `p + 1`.
    pub fn full_dim(&self) -> usize {
        self.x.ncols() + usize::from(self.has_intercept)
    }

    pub fn has_intercept(&self) -> bool {
        self.has_intercept
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.x
    }

    fn offset(&self) -> usize {
        usize::from(self.has_intercept)
    }

    /// `X̃ θ` for a full coefficient vector.
    pub fn linear_predictor(&self, theta: &DVector<f64>) -> DVector<f64> {
        let off = self.offset();
        let beta = theta.rows(off, self.ncols());
        let mut eta = &self.x * beta;
        if self.has_intercept {
            eta.add_scalar_mut(theta[0]);
        }
        eta
    }

    /// `X̃ᵀ r` in full layout.
    pub fn transpose_mul(&self, r: &DVector<f64>) -> DVector<f64> {
        let xt = self.x.tr_mul(r);
        if self.has_intercept {
            let mut out = DVector::zeros(self.full_dim());
            out[0] = r.sum();
            out.rows_mut(1, self.ncols()).copy_from(&xt);
            out
        } else {
            xt
        }
    }

    /// Entry of `X̃` in full layout.
    pub fn full_entry(&self, i: usize, j: usize) -> f64 {
        if self.has_intercept {
            if j == 0 {
                1.0
            } else {
                self.x[(i, j - 1)]
            }
        } else {
            self.x[(i, j)]
        }
    }

    /// Materialized `X̃ = [1_N, X]` (or `X`).
    pub fn augmented(&self) -> DMatrix<f64> {
        if self.has_intercept {
            let mut a = DMatrix::from_element(self.nrows(), self.full_dim(), 1.0);
            a.columns_mut(1, self.ncols()).copy_from(&self.x);
            a
        } else {
            self.x.clone()
        }
    }

    fn row_norm_sq(&self, i: usize) -> f64 {
        self.x.row(i).norm_squared() + if self.has_intercept { 1.0 } else { 0.0 }
    }
}

/// `λ_max(X̃ᵀX̃)` by power iteration on the Gram operator, applied as
/// `X̃ᵀ(X̃ v)` without forming the Gram matrix. Starts from the normalized
/// all-ones vector; stops when successive Rayleigh quotients agree to `tol`
/// relatively.
pub fn spectral_norm(design: &DesignMatrix, tol: f64, max_iter: usize) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(MistError::Validation(format!("tol must be positive, got {tol}")));
    }
    let dim = design.full_dim();
    let mut v = DVector::from_element(dim, 1.0 / (dim as f64).sqrt());
    let mut restarted = false;
    let mut prev = f64::NAN;
    for _ in 0..max_iter {
        let w = design.transpose_mul(&design.linear_predictor(&v));
        let rq = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            if restarted || dim == 1 {
                // the Gram operator vanishes identically
                return Ok(0.0);
            }
            // start vector in the null space; retry from a fixed ramp
            restarted = true;
            v = DVector::from_fn(dim, |j, _| (j + 1) as f64);
            v.normalize_mut();
            prev = f64::NAN;
            continue;
        }
        if (rq - prev).abs() <= tol * rq.abs() {
            return Ok(rq);
        }
        prev = rq;
        v = w / norm;
    }
    Err(MistError::PowerIteration {
        iterations: max_iter,
        rayleigh: prev,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Gaussian,
    Logistic,
    Poisson,
    Cox,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Gaussian, Family::Logistic, Family::Poisson, Family::Cox];

    pub fn name(self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::Logistic => "logistic",
            Family::Poisson => "poisson",
            Family::Cox => "cox",
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Family {
    type Err = MistError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "linear" => Ok(Family::Gaussian),
            "logistic" | "binomial" => Ok(Family::Logistic),
            "poisson" => Ok(Family::Poisson),
            "cox" => Ok(Family::Cox),
            _ => Err(MistError::Validation(format!("unknown family '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Response {
    Gaussian {
        y: DVector<f64>,
    },
    Logistic {
        y: DVector<f64>,
    },
    Poisson {
        y: DVector<f64>,
        offsets: DVector<f64>,
    },
    Cox {
        time: DVector<f64>,
        status: Vec<bool>,
    },
}

impl Response {
    pub fn gaussian(y: Vec<f64>) -> Self {
        Response::Gaussian {
            y: DVector::from_vec(y),
        }
    }

    pub fn logistic(y: Vec<f64>) -> Self {
        Response::Logistic {
            y: DVector::from_vec(y),
        }
    }

    /// Poisson counts with exposures `d_i` (all ones when `None`).
    pub fn poisson(y: Vec<f64>, offsets: Option<Vec<f64>>) -> Self {
        let n = y.len();
        Response::Poisson {
            y: DVector::from_vec(y),
            offsets: offsets.map_or_else(|| DVector::from_element(n, 1.0), DVector::from_vec),
        }
    }

    pub fn cox(time: Vec<f64>, status: Vec<bool>) -> Self {
        Response::Cox {
            time: DVector::from_vec(time),
            status,
        }
    }

    pub fn family(&self) -> Family {
        match self {
            Response::Gaussian { .. } => Family::Gaussian,
            Response::Logistic { .. } => Family::Logistic,
            Response::Poisson { .. } => Family::Poisson,
            Response::Cox { .. } => Family::Cox,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Response::Gaussian { y } | Response::Logistic { y } | Response::Poisson { y, .. } => {
                y.len()
            }
            Response::Cox { time, .. } => time.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(MistError::Validation(m.to_string()));
        match self {
            Response::Gaussian { y } => {
                if y.iter().any(|v| !v.is_finite()) {
                    return bad("gaussian response must be finite");
                }
            }
            Response::Logistic { y } => {
                if y.iter().any(|&v| v != 0.0 && v != 1.0) {
                    return bad("logistic response must be 0 or 1");
                }
            }
            Response::Poisson { y, offsets } => {
                check_len(y.len(), offsets.len())?;
                if y.iter().any(|&v| !(v >= 0.0 && v.is_finite() && v.fract() == 0.0)) {
                    return bad("poisson response must be nonnegative integers");
                }
                if offsets.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
                    return bad("poisson offsets must be positive");
                }
            }
            Response::Cox { time, status } => {
                check_len(time.len(), status.len())?;
                if time.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
                    return bad("cox times must be positive");
                }
                if !status.iter().any(|&s| s) {
                    return bad("cox response needs at least one event");
                }
            }
        }
        Ok(())
    }
}

/// `β̃ = [β₀, βᵀ]ᵀ`; the intercept is absent when the design has none.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientVector {
    pub intercept: Option<f64>,
    pub beta: DVector<f64>,
}

impl CoefficientVector {
    pub fn new(intercept: Option<f64>, beta: Vec<f64>) -> Self {
        CoefficientVector {
            intercept,
            beta: DVector::from_vec(beta),
        }
    }

    pub fn zeros(p: usize, has_intercept: bool) -> Self {
        CoefficientVector {
            intercept: has_intercept.then_some(0.0),
            beta: DVector::zeros(p),
        }
    }

    pub fn from_full(full: &DVector<f64>, has_intercept: bool) -> Self {
        if has_intercept {
            CoefficientVector {
                intercept: Some(full[0]),
                beta: full.rows(1, full.len() - 1).into_owned(),
            }
        } else {
            CoefficientVector {
                intercept: None,
                beta: full.clone(),
            }
        }
    }

    pub fn to_full(&self) -> DVector<f64> {
        match self.intercept {
            Some(b0) => {
                let mut v = DVector::zeros(self.beta.len() + 1);
                v[0] = b0;
                v.rows_mut(1, self.beta.len()).copy_from(&self.beta);
                v
            }
            None => self.beta.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.intercept.is_none_or(f64::is_finite) && self.beta.iter().all(|b| b.is_finite())
    }
}

/// Risk-set bookkeeping for the Breslow partial likelihood: subjects sorted
/// by decreasing time, with tied times grouped.
#[derive(Clone, Debug)]
struct CoxIndex {
    order: Vec<usize>,
    groups: Vec<(usize, usize)>,
    events: usize,
}

impl CoxIndex {
    fn new(time: &DVector<f64>, status: &[bool]) -> Self {
        let mut order: Vec<usize> = (0..time.len()).collect();
        order.sort_by(|&a, &b| time[b].total_cmp(&time[a]).then(a.cmp(&b)));
        let mut groups = Vec::new();
        let mut start = 0;
        for k in 1..=order.len() {
            if k == order.len() || time[order[k]] != time[order[start]] {
                groups.push((start, k));
                start = k;
            }
        }
        CoxIndex {
            order,
            groups,
            events: status.iter().filter(|&&s| s).count(),
        }
    }
}

/// Value and log-likelihood gradient at one point.
#[derive(Clone, Debug)]
pub(crate) struct FidelityEval {
    pub neg_loglik: f64,
    pub grad: DVector<f64>,
}

#[derive(Clone, Debug)]
pub struct FidelityModel {
    design: DesignMatrix,
    response: Response,
    cox: Option<CoxIndex>,
    gram_norm: OnceLock<f64>,
}

impl FidelityModel {
    pub fn new(design: DesignMatrix, response: Response) -> Result<Self> {
        check_len(design.nrows(), response.len())?;
        response.validate()?;
        let cox = match &response {
            Response::Cox { time, status } => {
                if design.has_intercept() {
                    return Err(MistError::Validation(
                        "cox partial likelihood has no intercept".into(),
                    ));
                }
                Some(CoxIndex::new(time, status))
            }
            _ => None,
        };
        Ok(FidelityModel {
            design,
            response,
            cox,
            gram_norm: OnceLock::new(),
        })
    }

    pub fn design(&self) -> &DesignMatrix {
        &self.design
    }

    pub fn response(&self) -> &Response {
        &self.response
    }

    pub fn family(&self) -> Family {
        self.response.family()
    }

    pub fn nobs(&self) -> usize {
        self.design.nrows()
    }

    /// Number of penalized coefficients.
    pub fn p(&self) -> usize {
        self.design.ncols()
    }

    pub fn has_intercept(&self) -> bool {
        self.design.has_intercept()
    }

    pub fn full_dim(&self) -> usize {
        self.design.full_dim()
    }

    fn check_coef(&self, coef: &CoefficientVector) -> Result<()> {
        check_len(self.p(), coef.beta.len())?;
        if coef.intercept.is_some() != self.has_intercept() {
            return Err(MistError::Validation(format!(
                "coefficient intercept presence ({}) disagrees with design ({})",
                coef.intercept.is_some(),
                self.has_intercept()
            )));
        }
        Ok(())
    }

    /// `-ℓ(β̃)`, up to family-specific additive constants: `c(y)` for the
    /// GLMs and `log y!` for Poisson are dropped.
    pub fn neg_loglik(&self, coef: &CoefficientVector) -> Result<f64> {
        self.check_coef(coef)?;
        self.neg_loglik_full(&coef.to_full())
    }

    /// `∇ℓ(β̃)` in full layout (intercept first when present).
    pub fn gradient(&self, coef: &CoefficientVector) -> Result<DVector<f64>> {
        self.check_coef(coef)?;
        Ok(self.eval_full(&coef.to_full())?.grad)
    }

    pub(crate) fn neg_loglik_full(&self, theta: &DVector<f64>) -> Result<f64> {
        let eta = self.design.linear_predictor(theta);
        self.neg_loglik_eta(&eta)
    }

    pub(crate) fn neg_loglik_eta(&self, eta: &DVector<f64>) -> Result<f64> {
        match &self.response {
            Response::Gaussian { y } => Ok(0.5 * (eta - y).norm_squared()),
            Response::Logistic { y } => Ok(eta
                .iter()
                .zip(y.iter())
                .map(|(&e, &yi)| softplus(e) - yi * e)
                .sum()),
            Response::Poisson { y, offsets } => {
                let v: f64 = eta
                    .iter()
                    .zip(y.iter().zip(offsets.iter()))
                    .map(|(&e, (&yi, &d))| d * e.exp() - yi * e)
                    .sum();
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(MistError::Overflow {
                        context: "poisson likelihood",
                        max_eta: eta.max(),
                    })
                }
            }
            Response::Cox { .. } => Ok(self.cox_pass(eta, 0).0),
        }
    }

    /// `∇ℓ` only, skipping the likelihood value where that saves work.
    pub(crate) fn gradient_full(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        let eta = self.design.linear_predictor(theta);
        match &self.response {
            Response::Gaussian { y } => Ok(self.design.transpose_mul(&(y - &eta))),
            Response::Logistic { y } => Ok(self
                .design
                .transpose_mul(&DVector::from_fn(eta.len(), |i, _| y[i] - sigmoid(eta[i])))),
            Response::Poisson { y, offsets } => {
                let r = DVector::from_fn(eta.len(), |i, _| y[i] - offsets[i] * eta[i].exp());
                if r.iter().any(|v| !v.is_finite()) {
                    return Err(MistError::Overflow {
                        context: "poisson gradient",
                        max_eta: eta.max(),
                    });
                }
                Ok(self.design.transpose_mul(&r))
            }
            Response::Cox { .. } => Ok(self.cox_pass(&eta, 1).1.expect("gradient requested")),
        }
    }

    pub(crate) fn eval_full(&self, theta: &DVector<f64>) -> Result<FidelityEval> {
        let eta = self.design.linear_predictor(theta);
        self.eval_eta(eta)
    }

    pub(crate) fn eval_eta(&self, eta: DVector<f64>) -> Result<FidelityEval> {
        let (neg_loglik, grad) = match &self.response {
            Response::Gaussian { y } => {
                let r = y - &eta;
                (0.5 * r.norm_squared(), self.design.transpose_mul(&r))
            }
            Response::Logistic { y } => {
                let r = DVector::from_fn(eta.len(), |i, _| y[i] - sigmoid(eta[i]));
                (self.neg_loglik_eta(&eta)?, self.design.transpose_mul(&r))
            }
            Response::Poisson { y, offsets } => {
                let v = self.neg_loglik_eta(&eta)?;
                let r = DVector::from_fn(eta.len(), |i, _| y[i] - offsets[i] * eta[i].exp());
                (v, self.design.transpose_mul(&r))
            }
            Response::Cox { .. } => {
                let (v, g, _) = self.cox_pass(&eta, 1);
                (v, g.expect("gradient requested"))
            }
        };
        Ok(FidelityEval { neg_loglik, grad })
    }

    /// Hessian of `-ℓ` in full layout.
    pub fn neg_hessian(&self, coef: &CoefficientVector) -> Result<DMatrix<f64>> {
        self.check_coef(coef)?;
        self.neg_hessian_full(&coef.to_full())
    }

    pub(crate) fn neg_hessian_full(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        let eta = self.design.linear_predictor(theta);
        let xa = self.design.augmented();
        let weighted = |w: DVector<f64>| {
            let mut wx = xa.clone();
            for (i, mut row) in wx.row_iter_mut().enumerate() {
                row *= w[i];
            }
            xa.tr_mul(&wx)
        };
        match &self.response {
            Response::Gaussian { .. } => Ok(xa.tr_mul(&xa)),
            Response::Logistic { .. } => Ok(weighted(eta.map(|e| {
                let s = sigmoid(e);
                s * (1.0 - s)
            }))),
            Response::Poisson { offsets, .. } => {
                let w = DVector::from_fn(eta.len(), |i, _| offsets[i] * eta[i].exp());
                if w.iter().any(|v| !v.is_finite()) {
                    return Err(MistError::Overflow {
                        context: "poisson hessian",
                        max_eta: eta.max(),
                    });
                }
                Ok(weighted(w))
            }
            Response::Cox { .. } => Ok(self.cox_pass(&eta, 2).2.expect("hessian requested")),
        }
    }

    /// One sweep over risk sets in decreasing time. Returns the negative log
    /// partial likelihood (Breslow ties), then the score when `order >= 1`
    /// and the hessian of the negative log partial likelihood when
    /// `order >= 2`.
    fn cox_pass(
        &self,
        eta: &DVector<f64>,
        order: u8,
    ) -> (f64, Option<DVector<f64>>, Option<DMatrix<f64>>) {
        let derivatives = order >= 1;
        let second = order >= 2;
        let (Some(index), Response::Cox { status, .. }) = (&self.cox, &self.response) else {
            unreachable!("cox pass on non-cox model");
        };
        let x = self.design.matrix();
        let p = x.ncols();
        let mut shift = f64::NEG_INFINITY;
        let mut s0 = 0.0;
        let mut s1 = DVector::<f64>::zeros(p);
        let mut s2 = DMatrix::<f64>::zeros(p, p);
        let mut value = 0.0;
        let mut grad = DVector::<f64>::zeros(p);
        let mut hess = DMatrix::<f64>::zeros(p, p);
        for &(lo, hi) in &index.groups {
            for &k in &index.order[lo..hi] {
                if eta[k] > shift {
                    let scale = (shift - eta[k]).exp();
                    s0 *= scale;
                    if derivatives {
                        s1 *= scale;
                    }
                    if second {
                        s2 *= scale;
                    }
                    shift = eta[k];
                }
                let w = (eta[k] - shift).exp();
                s0 += w;
                if derivatives {
                    let xk = x.row(k).transpose();
                    s1.axpy(w, &xk, 1.0);
                    if second {
                        s2.ger(w, &xk, &xk, 1.0);
                    }
                }
            }
            let log_denom = shift + s0.ln();
            for &i in &index.order[lo..hi] {
                if !status[i] {
                    continue;
                }
                value -= eta[i] - log_denom;
                if derivatives {
                    let mean = &s1 / s0;
                    grad += x.row(i).transpose() - &mean;
                    if second {
                        hess += &s2 / s0 - &mean * mean.transpose();
                    }
                }
            }
        }
        (
            value,
            derivatives.then_some(grad),
            second.then_some(hess),
        )
    }

    /// `λ_max(X̃ᵀX̃)`, computed once per model.
    pub fn gram_spectral_norm(&self) -> f64 {
        *self.gram_norm.get_or_init(|| {
            match spectral_norm(&self.design, GRAM_TOL, GRAM_MAX_ITER) {
                Ok(v) => v,
                Err(e) => {
                    // trace of the Gram matrix bounds its largest eigenvalue
                    let frob = self.design.matrix().norm_squared()
                        + if self.has_intercept() { self.nobs() as f64 } else { 0.0 };
                    log::warn!("{e}; falling back to the Frobenius bound {frob}");
                    frob
                }
            }
        })
    }

    /// Upper bound on the largest eigenvalue of the hessian of `-ℓ` over the
    /// whole parameter space.
    pub fn curvature_bound(&self) -> Result<f64> {
        match &self.response {
            Response::Gaussian { .. } => Ok(self.gram_spectral_norm()),
            Response::Logistic { .. } => Ok(0.25 * self.gram_spectral_norm()),
            Response::Cox { .. } => {
                let events = self.cox.as_ref().map_or(0, |c| c.events) as f64;
                let max_row = (0..self.nobs())
                    .map(|i| self.design.row_norm_sq(i))
                    .fold(0.0, f64::max);
                Ok(events * max_row)
            }
            Response::Poisson { .. } => Err(MistError::NotGloballyLipschitz),
        }
    }

    /// Curvature bound valid on the ball `‖β̃‖ ≤ radius`. For Poisson this is
    /// `max_i d_i e^{‖x̃_i‖ R} · λ_max(X̃ᵀX̃)`; the other families return
    /// their global bound.
    pub fn curvature_bound_in_region(&self, radius: f64) -> Result<f64> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(MistError::Validation(format!(
                "region radius must be positive, got {radius}"
            )));
        }
        match &self.response {
            Response::Poisson { offsets, .. } => {
                let scale = (0..self.nobs())
                    .map(|i| offsets[i] * (self.design.row_norm_sq(i).sqrt() * radius).exp())
                    .fold(0.0, f64::max);
                let bound = scale * self.gram_spectral_norm();
                if bound.is_finite() {
                    Ok(bound)
                } else {
                    Err(MistError::Overflow {
                        context: "poisson region bound",
                        max_eta: radius,
                    })
                }
            }
            _ => self.curvature_bound(),
        }
    }

    /// Unpenalized maximum likelihood estimate: least squares for the
    /// gaussian family, damped Newton iterations to `1e-10` otherwise.
    pub fn mle(&self) -> Result<CoefficientVector> {
        let dim = self.full_dim();
        if dim > self.nobs() {
            return Err(MistError::NoMle(format!(
                "{dim} coefficients but only {} observations",
                self.nobs()
            )));
        }
        let singular = || MistError::NoMle("singular information matrix".into());
        if let Response::Gaussian { y } = &self.response {
            let xa = self.design.augmented();
            let chol = xa.tr_mul(&xa).cholesky().ok_or_else(singular)?;
            let theta = chol.solve(&xa.tr_mul(y));
            return Ok(CoefficientVector::from_full(&theta, self.has_intercept()));
        }

        let mut theta = DVector::zeros(dim);
        let mut current = self.eval_full(&theta)?;
        for _ in 0..200 {
            let hess = self.neg_hessian_full(&theta)?;
            let chol = hess.cholesky().ok_or_else(singular)?;
            let dir = chol.solve(&current.grad);
            if !dir.iter().all(|d| d.is_finite()) {
                return Err(singular());
            }
            let mut step = 1.0;
            let mut accepted = None;
            for _ in 0..60 {
                let cand = &theta + &dir * step;
                if let Ok(ev) = self.eval_full(&cand) {
                    if ev.neg_loglik <= current.neg_loglik {
                        accepted = Some((cand, ev));
                        break;
                    }
                }
                step *= 0.5;
            }
            let Some((cand, ev)) = accepted else {
                break;
            };
            let moved = (&cand - &theta).amax();
            theta = cand;
            current = ev;
            if moved < 1e-10 * (1.0 + theta.amax()) {
                return Ok(CoefficientVector::from_full(&theta, self.has_intercept()));
            }
            if theta.amax() > 1e8 {
                break;
            }
        }
        Err(MistError::NoMle(
            "newton iterations did not converge (possible separation)".into(),
        ))
    }
}

fn softplus(e: f64) -> f64 {
    if e > 0.0 {
        e + (-e).exp().ln_1p()
    } else {
        e.exp().ln_1p()
    }
}

fn sigmoid(e: f64) -> f64 {
    if e >= 0.0 {
        1.0 / (1.0 + (-e).exp())
    } else {
        let z = e.exp();
        z / (1.0 + z)
    }
}

/// One column's share of the separable Poisson majorizer: the rows with
/// `x̃_ij ≠ 0`, their entries and the mixing weights `θ_ij`.
#[derive(Clone, Debug, Default)]
struct MajorizerColumn {
    rows: Vec<usize>,
    /// `x̃_ij / θ_ij`
    slopes: Vec<f64>,
    thetas: Vec<f64>,
}

/// Separable majorizer of the Poisson negative log-likelihood,
/// `k(β̃, α̃) = Σ_j k_j(β_j; α_j)` with
/// `k_j(b; α_j) = Σ_{i: x̃_ij ≠ 0} θ_ij f_i((x̃_ij / θ_ij)(b − α_j) + x̃_iᵀα̃)`,
/// `f_i(u) = d_i e^u − y_i u` and `θ_ij = |x̃_ij| / Σ_k |x̃_ik|`.
#[derive(Clone, Debug)]
pub struct PoissonMajorizer<'a> {
    model: &'a FidelityModel,
    columns: Vec<MajorizerColumn>,
    /// Rows of `X̃` that are identically zero; they contribute the constant
    /// `f_i(0)` regardless of `β̃`.
    null_rows: Vec<usize>,
}

impl<'a> PoissonMajorizer<'a> {
    pub fn new(model: &'a FidelityModel) -> Result<Self> {
        if model.family() != Family::Poisson {
            return Err(MistError::Validation(
                "separable majorizer requires the poisson family".into(),
            ));
        }
        let design = model.design();
        let dim = design.full_dim();
        let mut columns = vec![MajorizerColumn::default(); dim];
        let mut null_rows = Vec::new();
        for i in 0..design.nrows() {
            let total: f64 = (0..dim).map(|j| design.full_entry(i, j).abs()).sum();
            if total == 0.0 {
                null_rows.push(i);
                continue;
            }
            for (j, col) in columns.iter_mut().enumerate() {
                let x = design.full_entry(i, j);
                if x != 0.0 {
                    let theta = x.abs() / total;
                    col.rows.push(i);
                    col.slopes.push(x / theta);
                    col.thetas.push(theta);
                }
            }
        }
        Ok(PoissonMajorizer {
            model,
            columns,
            null_rows,
        })
    }

    pub fn model(&self) -> &FidelityModel {
        self.model
    }

    fn counts(&self) -> (&DVector<f64>, &DVector<f64>) {
        match self.model.response() {
            Response::Poisson { y, offsets } => (y, offsets),
            _ => unreachable!(),
        }
    }

    /// Whether column `j` (full layout) has any nonzero entries.
    pub(crate) fn column_is_active(&self, j: usize) -> bool {
        !self.columns[j].rows.is_empty()
    }

    /// `(k_j, k_j', k_j'')` at `b`, given `η = X̃ α̃`. Non-finite values are
    /// returned as-is; callers decide whether overflow is an error.
    pub(crate) fn component_at(&self, eta: &DVector<f64>, alpha_j: f64, j: usize, b: f64) -> (f64, f64, f64) {
        let (y, d) = self.counts();
        let col = &self.columns[j];
        let (mut v, mut d1, mut d2) = (0.0, 0.0, 0.0);
        for ((&i, &slope), &theta) in col.rows.iter().zip(&col.slopes).zip(&col.thetas) {
            let u = slope * (b - alpha_j) + eta[i];
            let mu = d[i] * u.exp();
            v += theta * (mu - y[i] * u);
            d1 += slope * theta * (mu - y[i]);
            d2 += slope * slope * theta * mu;
        }
        (v, d1, d2)
    }

    /// `(k_j(β_j; α_j), ∂k_j/∂β_j)` for full-layout coordinate `j`.
    pub fn component(&self, alpha: &CoefficientVector, j: usize, beta_j: f64) -> Result<(f64, f64)> {
        self.model.check_coef(alpha)?;
        if j >= self.columns.len() {
            return Err(MistError::DimensionMismatch {
                expected: self.columns.len(),
                found: j + 1,
            });
        }
        let full = alpha.to_full();
        let eta = self.model.design().linear_predictor(&full);
        let (v, d1, _) = self.component_at(&eta, full[j], j, beta_j);
        if v.is_finite() && d1.is_finite() {
            Ok((v, d1))
        } else {
            Err(MistError::Overflow {
                context: "poisson majorizer",
                max_eta: eta.max(),
            })
        }
    }

    /// `Σ_j k_j(β_j; α_j)` plus the constant contribution of null rows.
    pub fn total(&self, alpha: &CoefficientVector, beta: &CoefficientVector) -> Result<f64> {
        self.model.check_coef(alpha)?;
        self.model.check_coef(beta)?;
        let a = alpha.to_full();
        let b = beta.to_full();
        let eta = self.model.design().linear_predictor(&a);
        let mut total = self.null_row_constant();
        for j in 0..a.len() {
            total += self.component_at(&eta, a[j], j, b[j]).0;
        }
        if total.is_finite() {
            Ok(total)
        } else {
            Err(MistError::Overflow {
                context: "poisson majorizer",
                max_eta: eta.max(),
            })
        }
    }

    pub(crate) fn null_row_constant(&self) -> f64 {
        let (_, d) = self.counts();
        self.null_rows.iter().map(|&i| d[i]).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn design(rows: &[&[f64]], intercept: bool) -> DesignMatrix {
        DesignMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>(), intercept)
            .unwrap()
    }

    #[test]
    fn gaussian_exact_fit() {
        let m = FidelityModel::new(design(&[&[1.0], &[0.0]], false), Response::gaussian(vec![1.0, 0.0]))
            .unwrap();
        assert_eq!(m.neg_loglik(&CoefficientVector::new(None, vec![1.0])).unwrap(), 0.0);
    }

    #[test]
    fn logistic_at_zero() {
        let m = FidelityModel::new(design(&[&[0.0, 0.0]], true), Response::logistic(vec![1.0]))
            .unwrap();
        let c = CoefficientVector::new(Some(0.0), vec![0.0, 0.0]);
        assert_relative_eq!(m.neg_loglik(&c).unwrap(), 2f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn cox_two_subjects() {
        let m = FidelityModel::new(
            design(&[&[1.0], &[0.0]], false),
            Response::cox(vec![1.0, 2.0], vec![true, true]),
        )
        .unwrap();
        let c = CoefficientVector::new(None, vec![0.0]);
        assert_relative_eq!(m.neg_loglik(&c).unwrap(), 2f64.ln(), epsilon = 1e-15);
        assert_relative_eq!(m.curvature_bound().unwrap(), 2.0);
        // score at zero: event 1 has x=1 vs risk-set mean 1/2; event 2 has x=0 vs mean 0
        assert_relative_eq!(m.gradient(&c).unwrap()[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn cox_breslow_ties_share_denominator() {
        // three subjects, two tied events at t=1
        let m = FidelityModel::new(
            design(&[&[1.0], &[2.0], &[0.5]], false),
            Response::cox(vec![1.0, 1.0, 3.0], vec![true, true, false]),
        )
        .unwrap();
        let b = 0.3;
        let c = CoefficientVector::new(None, vec![b]);
        let denom: f64 = [1.0, 2.0, 0.5].iter().map(|x: &f64| (b * x).exp()).sum();
        let expected = -((b * 1.0 - denom.ln()) + (b * 2.0 - denom.ln()));
        assert_relative_eq!(m.neg_loglik(&c).unwrap(), expected, epsilon = 1e-13);
    }

    #[test]
    fn cox_rejects_intercept_and_censored_only() {
        assert!(FidelityModel::new(design(&[&[1.0]], true), Response::cox(vec![1.0], vec![true])).is_err());
        assert!(FidelityModel::new(design(&[&[1.0]], false), Response::cox(vec![1.0], vec![false])).is_err());
    }

    #[test]
    fn gradients_small_examples() {
        let m = FidelityModel::new(
            design(&[&[1.0, 0.0], &[0.0, 1.0]], false),
            Response::gaussian(vec![1.0, 2.0]),
        )
        .unwrap();
        let g = m.gradient(&CoefficientVector::new(None, vec![0.0, 0.0])).unwrap();
        assert_eq!(g.as_slice(), &[1.0, 2.0]);

        let m = FidelityModel::new(design(&[&[1.0]], false), Response::poisson(vec![3.0], None)).unwrap();
        let g = m.gradient(&CoefficientVector::new(None, vec![0.0])).unwrap();
        assert_eq!(g.as_slice(), &[2.0]);

        let x = [[0.3, -1.0], [2.0, 0.5], [-0.7, 0.1]];
        let y = vec![1.0, 0.0, 1.0];
        let m = FidelityModel::new(
            design(&x.iter().map(|r| &r[..]).collect::<Vec<_>>(), true),
            Response::logistic(y.clone()),
        )
        .unwrap();
        let g = m.gradient(&CoefficientVector::zeros(2, true)).unwrap();
        let r: Vec<f64> = y.iter().map(|v| v - 0.5).collect();
        assert_relative_eq!(g[0], r.iter().sum::<f64>(), epsilon = 1e-15);
        for j in 0..2 {
            let e: f64 = (0..3).map(|i| x[i][j] * r[i]).sum();
            assert_relative_eq!(g[j + 1], e, epsilon = 1e-15);
        }
    }

    #[test]
    fn curvature_bounds() {
        let id = design(&[&[1.0, 0.0], &[0.0, 1.0]], false);
        let g = FidelityModel::new(id.clone(), Response::gaussian(vec![0.0, 0.0])).unwrap();
        assert_relative_eq!(g.curvature_bound().unwrap(), 1.0, epsilon = 1e-12);
        let l = FidelityModel::new(id.clone(), Response::logistic(vec![0.0, 1.0])).unwrap();
        assert_relative_eq!(l.curvature_bound().unwrap(), 0.25, epsilon = 1e-12);
        let p = FidelityModel::new(id, Response::poisson(vec![0.0, 1.0], None)).unwrap();
        assert!(matches!(p.curvature_bound(), Err(MistError::NotGloballyLipschitz)));
        assert!(p.curvature_bound_in_region(1.0).unwrap() > 1.0);
    }

    #[test]
    fn power_iteration() {
        let d = design(&[&[3.0, 0.0], &[0.0, 1.0]], false);
        assert_relative_eq!(spectral_norm(&d, 1e-12, 1000).unwrap(), 9.0, epsilon = 1e-9);
        let d = design(&[&[1.0, 1.0], &[1.0, 1.0]], false);
        assert_relative_eq!(spectral_norm(&d, 1e-12, 1000).unwrap(), 4.0, epsilon = 1e-12);
        let d = design(&[&[2.0]], false);
        assert_relative_eq!(spectral_norm(&d, 1e-12, 10).unwrap(), 4.0);
        // all-ones start lies in the null space of this Gram matrix
        let d = design(&[&[1.0, -1.0]], false);
        assert_relative_eq!(spectral_norm(&d, 1e-12, 1000).unwrap(), 2.0, epsilon = 1e-9);
        // nearly degenerate top pair cannot converge in two iterations
        let d = design(&[&[1.0, 0.0], &[0.0, 0.999]], false);
        match spectral_norm(&d, 1e-15, 2) {
            Err(MistError::PowerIteration { rayleigh, .. }) => assert!(rayleigh > 0.9),
            other => panic!("expected non-convergence, got {other:?}"),
        }
        assert!(spectral_norm(&d, 0.0, 2).is_err());
    }

    #[test]
    fn poisson_majorizer_examples() {
        let m = FidelityModel::new(design(&[&[1.0]], false), Response::poisson(vec![0.0], None)).unwrap();
        let k = PoissonMajorizer::new(&m).unwrap();
        let (v, d) = k
            .component(&CoefficientVector::new(None, vec![0.0]), 0, 1.0)
            .unwrap();
        assert_relative_eq!(v, 1f64.exp());
        assert_relative_eq!(d, 1f64.exp());

        // a zero entry contributes nothing to that column
        let m = FidelityModel::new(
            design(&[&[0.0, 1.0], &[1.0, 1.0]], false),
            Response::poisson(vec![1.0, 2.0], None),
        )
        .unwrap();
        let k = PoissonMajorizer::new(&m).unwrap();
        assert_eq!(k.columns[0].rows, vec![1]);

        let alpha = CoefficientVector::new(None, vec![0.2, -0.1]);
        let touch = k.total(&alpha, &alpha).unwrap();
        assert_relative_eq!(touch, m.neg_loglik(&alpha).unwrap(), epsilon = 1e-13);
    }

    #[test]
    fn mle_gaussian_and_logistic() {
        let x = [[1.0, 0.2], [0.5, -1.0], [-0.3, 0.4], [2.0, 1.0], [-1.0, -0.5]];
        let rows: Vec<&[f64]> = x.iter().map(|r| &r[..]).collect();
        let m = FidelityModel::new(design(&rows, true), Response::gaussian(vec![1.0, 0.0, 0.5, 2.0, -1.0]))
            .unwrap();
        let mle = m.mle().unwrap();
        assert!(m.gradient(&mle).unwrap().amax() < 1e-10);

        let m = FidelityModel::new(design(&rows, true), Response::logistic(vec![1.0, 0.0, 1.0, 0.0, 0.0]))
            .unwrap();
        let mle = m.mle().unwrap();
        assert!(m.gradient(&mle).unwrap().amax() < 1e-8);

        // perfectly separated data has no MLE
        let m = FidelityModel::new(design(&rows, false), Response::logistic(vec![1.0, 1.0, 0.0, 1.0, 0.0]))
            .unwrap();
        assert!(matches!(m.mle(), Err(MistError::NoMle(_))));

        let wide = FidelityModel::new(design(&[&[1.0, 2.0]], false), Response::gaussian(vec![1.0])).unwrap();
        assert!(matches!(wide.mle(), Err(MistError::NoMle(_))));
    }

    #[test]
    fn response_validation() {
        let d = design(&[&[1.0], &[2.0]], false);
        assert!(FidelityModel::new(d.clone(), Response::logistic(vec![0.0, 0.5])).is_err());
        assert!(FidelityModel::new(d.clone(), Response::poisson(vec![1.5, 0.0], None)).is_err());
        assert!(FidelityModel::new(d.clone(), Response::poisson(vec![1.0, 0.0], Some(vec![1.0, 0.0]))).is_err());
        assert!(FidelityModel::new(d.clone(), Response::cox(vec![1.0, -1.0], vec![true, true])).is_err());
        assert!(FidelityModel::new(d.clone(), Response::gaussian(vec![1.0])).is_err());
        assert!(DesignMatrix::from_rows(&[vec![1.0, f64::NAN]], false).is_err());
        let m = FidelityModel::new(d, Response::gaussian(vec![1.0, 2.0])).unwrap();
        assert!(m.neg_loglik(&CoefficientVector::new(Some(0.0), vec![1.0])).is_err());
    }

    #[test]
    fn poisson_overflow_is_reported() {
        let m = FidelityModel::new(design(&[&[1.0]], false), Response::poisson(vec![1.0], None)).unwrap();
        let err = m.neg_loglik(&CoefficientVector::new(None, vec![1000.0])).unwrap_err();
        assert!(matches!(err, MistError::Overflow { .. }));
    }
}
