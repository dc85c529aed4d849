//! Penalty families that are concave, nondecreasing and singular at the origin.
//!
//! Every family is expressed through its scalar profile `p(r; λ_j)` for
//! `r = |β_j| ≥ 0` and the right-derivative `p'(r; λ_j)`. The solver only
//! consumes the derivative (as soft-threshold levels) and the value (for the
//! objective), so user-defined profiles can be checked with [`verify_p1`]
//! through the [`ScalarPenalty`] trait.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{MistError, Result};

/// Default SCAD / MCP shape parameter.
pub const DEFAULT_A: f64 = 3.7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyFamily {
    #[serde(alias = "las")]
    Lasso,
    #[serde(alias = "alas")]
    AdaptiveLasso,
    #[serde(alias = "en")]
    ElasticNet,
    #[serde(alias = "aen")]
    AdaptiveElasticNet,
    Scad,
    Mcp,
    Geman,
    Log,
}

impl PenaltyFamily {
    pub const ALL: [PenaltyFamily; 8] = [
        PenaltyFamily::Lasso,
        PenaltyFamily::AdaptiveLasso,
        PenaltyFamily::ElasticNet,
        PenaltyFamily::AdaptiveElasticNet,
        PenaltyFamily::Scad,
        PenaltyFamily::Mcp,
        PenaltyFamily::Geman,
        PenaltyFamily::Log,
    ];

    /// Families whose profile is linear in `r` (weighted L1).
    pub fn is_lasso_type(self) -> bool {
        matches!(
            self,
            PenaltyFamily::Lasso
                | PenaltyFamily::AdaptiveLasso
                | PenaltyFamily::ElasticNet
                | PenaltyFamily::AdaptiveElasticNet
        )
    }

    pub fn is_adaptive(self) -> bool {
        matches!(
            self,
            PenaltyFamily::AdaptiveLasso | PenaltyFamily::AdaptiveElasticNet
        )
    }

    /// Families whose derivative reaches zero at a finite radius.
    pub fn has_flat_tail(self) -> bool {
        matches!(self, PenaltyFamily::Scad | PenaltyFamily::Mcp)
    }

    /// The convex penalties: for these the penalized problem has a unique
    /// minimizer whenever the fidelity is strictly convex.
    pub fn is_convex(self) -> bool {
        self.is_lasso_type()
    }

    pub fn name(self) -> &'static str {
        match self {
            PenaltyFamily::Lasso => "lasso",
            PenaltyFamily::AdaptiveLasso => "adaptive_lasso",
            PenaltyFamily::ElasticNet => "elastic_net",
            PenaltyFamily::AdaptiveElasticNet => "adaptive_elastic_net",
            PenaltyFamily::Scad => "scad",
            PenaltyFamily::Mcp => "mcp",
            PenaltyFamily::Geman => "geman",
            PenaltyFamily::Log => "log",
        }
    }
}

impl std::fmt::Display for PenaltyFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PenaltyFamily {
    type Err = MistError;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase()))
            .map_err(|_| MistError::Validation(format!("unknown penalty family '{s}'")))
    }
}

/// A penalty `Σ_j p(|β_j|; λ_j) + λ ε ‖β‖²`.
///
/// `weights` carries the per-coordinate L1 multipliers of the adaptive
/// families; an infinite weight pins that coordinate at zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub family: PenaltyFamily,
    pub lambda: f64,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Exponent used to derive adaptive weights from a pilot estimate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        with = "weights_serde"
    )]
    pub weights: Option<Vec<f64>>,
}

impl PenaltySpec {
    fn base(family: PenaltyFamily, lambda: f64) -> Self {
        PenaltySpec {
            family,
            lambda,
            epsilon: 0.0,
            a: None,
            delta: None,
            gamma: None,
            weights: None,
        }
    }

    pub fn lasso(lambda: f64) -> Self {
        Self::base(PenaltyFamily::Lasso, lambda)
    }

    pub fn elastic_net(lambda: f64, epsilon: f64) -> Self {
        PenaltySpec {
            epsilon,
            ..Self::base(PenaltyFamily::ElasticNet, lambda)
        }
    }

    pub fn adaptive_lasso(lambda: f64, weights: Vec<f64>) -> Self {
        PenaltySpec {
            weights: Some(weights),
            ..Self::base(PenaltyFamily::AdaptiveLasso, lambda)
        }
    }

    pub fn adaptive_elastic_net(lambda: f64, epsilon: f64, weights: Vec<f64>) -> Self {
        PenaltySpec {
            epsilon,
            weights: Some(weights),
            ..Self::base(PenaltyFamily::AdaptiveElasticNet, lambda)
        }
    }

    pub fn scad(lambda: f64, a: f64) -> Self {
        PenaltySpec {
            a: Some(a),
            ..Self::base(PenaltyFamily::Scad, lambda)
        }
    }

    pub fn mcp(lambda: f64, a: f64) -> Self {
        PenaltySpec {
            a: Some(a),
            ..Self::base(PenaltyFamily::Mcp, lambda)
        }
    }

    pub fn geman(lambda: f64, delta: f64) -> Self {
        PenaltySpec {
            delta: Some(delta),
            ..Self::base(PenaltyFamily::Geman, lambda)
        }
    }

    pub fn log(lambda: f64, delta: f64) -> Self {
        PenaltySpec {
            delta: Some(delta),
            ..Self::base(PenaltyFamily::Log, lambda)
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Self {
        self.weights = Some(weights);
        self
    }

    /// SCAD/MCP shape, defaulting to 3.7.
    pub fn shape_a(&self) -> f64 {
        self.a.unwrap_or(DEFAULT_A)
    }

    fn shape_delta(&self) -> f64 {
        self.delta.unwrap_or(f64::NAN)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(MistError::Validation(msg));
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be positive and finite, got {}", self.lambda));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be nonnegative, got {}", self.epsilon));
        }
        match self.family {
            PenaltyFamily::Scad | PenaltyFamily::Mcp => {
                let a = self.shape_a();
                if !(a > 2.0 && a.is_finite()) {
                    return bad(format!("{} requires a > 2, got {a}", self.family));
                }
            }
            PenaltyFamily::Geman | PenaltyFamily::Log => match self.delta {
                Some(d) if d > 0.0 && d.is_finite() => {}
                Some(d) => return bad(format!("{} requires delta > 0, got {d}", self.family)),
                None => return bad(format!("{} requires delta", self.family)),
            },
            _ => {}
        }
        match (&self.weights, self.family.is_adaptive()) {
            (Some(w), true) => {
                if let Some(bad_w) = w.iter().find(|&&x| x.is_nan() || x < 0.0) {
                    return bad(format!("adaptive weights must be nonnegative, got {bad_w}"));
                }
            }
            (None, true) => return bad(format!("{} requires weights", self.family)),
            (Some(_), false) => {
                return bad(format!("{} does not take weights", self.family));
            }
            (None, false) => {}
        }
        Ok(())
    }

    /// Number of coordinates fixed by the weight vector, if any.
    pub fn weight_len(&self) -> Option<usize> {
        self.weights.as_ref().map(Vec::len)
    }

    fn weight(&self, j: usize) -> Result<f64> {
        match &self.weights {
            Some(w) => w.get(j).copied().ok_or(MistError::DimensionMismatch {
                expected: w.len(),
                found: j + 1,
            }),
            None => Ok(1.0),
        }
    }

    /// `p(r; λ_j)` for coordinate `j`.
    pub fn value(&self, j: usize, r: f64) -> Result<f64> {
        self.validate()?;
        check_radius(r)?;
        Ok(self.value_unchecked(self.weight(j)?, r))
    }

    /// Right-derivative `p'(r; λ_j)`; at `r = 0` this is `p'(0+)`.
    pub fn derivative(&self, j: usize, r: f64) -> Result<f64> {
        self.validate()?;
        check_radius(r)?;
        Ok(self.derivative_unchecked(self.weight(j)?, r))
    }

    pub(crate) fn value_unchecked(&self, weight: f64, r: f64) -> f64 {
        let lam = self.lambda;
        match self.family {
            f if f.is_lasso_type() => {
                if weight.is_infinite() {
                    if r == 0.0 {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                } else {
                    lam * weight * r
                }
            }
            PenaltyFamily::Scad => {
                let a = self.shape_a();
                if r <= lam {
                    lam * r
                } else if r <= a * lam {
                    (2.0 * a * lam * r - r * r - lam * lam) / (2.0 * (a - 1.0))
                } else {
                    lam * lam * (a + 1.0) / 2.0
                }
            }
            PenaltyFamily::Mcp => {
                let a = self.shape_a();
                if r <= a * lam {
                    lam * r - r * r / (2.0 * a)
                } else {
                    a * lam * lam / 2.0
                }
            }
            PenaltyFamily::Geman => {
                let d = self.shape_delta();
                lam * d * r / (1.0 + d * r)
            }
            PenaltyFamily::Log => lam * (self.shape_delta() * r).ln_1p(),
            _ => unreachable!(),
        }
    }

    pub(crate) fn derivative_unchecked(&self, weight: f64, r: f64) -> f64 {
        let lam = self.lambda;
        match self.family {
            f if f.is_lasso_type() => {
                if weight.is_infinite() {
                    f64::INFINITY
                } else {
                    lam * weight
                }
            }
            PenaltyFamily::Scad => {
                let a = self.shape_a();
                if r <= lam {
                    lam
                } else {
                    (a * lam - r).max(0.0) / (a - 1.0)
                }
            }
            PenaltyFamily::Mcp => (lam - r / self.shape_a()).max(0.0),
            PenaltyFamily::Geman => {
                let d = self.shape_delta();
                let s = 1.0 + d * r;
                lam * d / (s * s)
            }
            PenaltyFamily::Log => {
                let d = self.shape_delta();
                lam * d / (d * r + 1.0)
            }
            _ => unreachable!(),
        }
    }

    /// Soft-threshold levels `τ_j = p'(|α_j|; λ_j)`.
    pub fn threshold_vector(&self, alpha: &DVector<f64>) -> Result<DVector<f64>> {
        self.validate()?;
        if let Some(n) = self.weight_len() {
            crate::error::check_len(n, alpha.len())?;
        }
        Ok(self.thresholds_unchecked(alpha.as_slice()))
    }

    pub(crate) fn thresholds_unchecked(&self, alpha: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            alpha.len(),
            alpha.iter().enumerate().map(|(j, a)| {
                let w = self.weights.as_ref().map_or(1.0, |w| w[j]);
                self.derivative_unchecked(w, a.abs())
            }),
        )
    }

    /// `Σ_j p(|β_j|; λ_j) + λ ε ‖β‖²`.
    pub(crate) fn total_unchecked(&self, beta: &[f64]) -> f64 {
        let mut sum = 0.0;
        let mut sq = 0.0;
        for (j, b) in beta.iter().enumerate() {
            let w = self.weights.as_ref().map_or(1.0, |w| w[j]);
            sum += self.value_unchecked(w, b.abs());
            sq += b * b;
        }
        sum + self.lambda * self.epsilon * sq
    }

    /// Scalar profile of coordinate `j`, usable with [`verify_p1`].
    pub fn coordinate(&self, j: usize) -> Result<CoordinatePenalty<'_>> {
        self.validate()?;
        Ok(CoordinatePenalty {
            spec: self,
            weight: self.weight(j)?,
        })
    }
}

fn check_radius(r: f64) -> Result<()> {
    if r >= 0.0 {
        Ok(())
    } else {
        Err(MistError::Domain(format!(
            "penalty argument must be nonnegative, got {r}"
        )))
    }
}

/// A scalar penalty profile `r ↦ p(r)` on `r ≥ 0`.
pub trait ScalarPenalty {
    fn value(&self, r: f64) -> f64;
    /// Right-derivative.
    fn derivative(&self, r: f64) -> f64;
}

#[derive(Clone, Copy, Debug)]
pub struct CoordinatePenalty<'a> {
    spec: &'a PenaltySpec,
    weight: f64,
}

impl ScalarPenalty for CoordinatePenalty<'_> {
    fn value(&self, r: f64) -> f64 {
        self.spec.value_unchecked(self.weight, r)
    }

    fn derivative(&self, r: f64) -> f64 {
        self.spec.derivative_unchecked(self.weight, r)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClauseCheck {
    pub passed: bool,
    /// First grid point at which the clause failed.
    pub first_violation: Option<f64>,
}

impl ClauseCheck {
    fn from_violation(first_violation: Option<f64>) -> Self {
        ClauseCheck {
            passed: first_violation.is_none(),
            first_violation,
        }
    }
}

/// Outcome of a grid check of the regularity conditions on a penalty profile.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct P1Report {
    /// `p(r) > 0` for `r > 0`.
    pub positive: ClauseCheck,
    /// `p'(r) ≥ 0`.
    pub nonnegative_slope: ClauseCheck,
    /// `p'` nonincreasing along the grid (concavity).
    pub nonincreasing_slope: ClauseCheck,
    /// `p'(0+)` finite and positive.
    pub origin_slope: ClauseCheck,
}

impl P1Report {
    pub fn all_pass(&self) -> bool {
        self.positive.passed
            && self.nonnegative_slope.passed
            && self.nonincreasing_slope.passed
            && self.origin_slope.passed
    }
}

/// Numerically checks positivity, monotonicity and concavity of a profile on
/// a strictly increasing grid of positive radii.
pub fn verify_p1<P: ScalarPenalty + ?Sized>(penalty: &P, grid: &[f64]) -> Result<P1Report> {
    if grid.is_empty() {
        return Err(MistError::Validation("P1 grid is empty".into()));
    }
    if grid[0] <= 0.0 || grid.windows(2).any(|w| w[1] <= w[0]) || grid.iter().any(|r| !r.is_finite()) {
        return Err(MistError::Validation(
            "P1 grid must be positive, finite and strictly increasing".into(),
        ));
    }

    let slopes: Vec<f64> = grid.iter().map(|&r| penalty.derivative(r)).collect();
    let positive = grid.iter().copied().find(|&r| !(penalty.value(r) > 0.0));
    let nonneg = grid
        .iter()
        .zip(&slopes)
        .find(|(_, &d)| !(d >= 0.0))
        .map(|(&r, _)| r);
    let nonincreasing = slopes
        .windows(2)
        .position(|w| w[1] > w[0] + 1e-12 * w[0].abs().max(1.0))
        .map(|i| grid[i + 1]);
    let d0 = penalty.derivative(0.0);
    let origin = if d0.is_finite() && d0 > 0.0 {
        None
    } else {
        Some(0.0)
    };

    Ok(P1Report {
        positive: ClauseCheck::from_violation(positive),
        nonnegative_slope: ClauseCheck::from_violation(nonneg),
        nonincreasing_slope: ClauseCheck::from_violation(nonincreasing),
        origin_slope: ClauseCheck::from_violation(origin),
    })
}

/// Adaptive L1 weights `ω_j = |pilot_j|^{-γ}`; a zero pilot coefficient gives
/// `ω_j = +∞`, which pins that coordinate at zero.
pub fn compute_adaptive_weights(pilot: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(MistError::Validation(format!(
            "adaptive weight exponent must be positive, got {gamma}"
        )));
    }
    Ok(pilot
        .iter()
        .map(|&b| {
            if b == 0.0 {
                f64::INFINITY
            } else {
                b.abs().powf(-gamma)
            }
        })
        .collect())
}

mod weights_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Entry {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(w: &Option<Vec<f64>>, s: S) -> Result<S::Ok, S::Error> {
        match w {
            None => s.serialize_none(),
            Some(w) => w
                .iter()
                .map(|&x| {
                    if x == f64::INFINITY {
                        Entry::Text("inf".into())
                    } else {
                        Entry::Num(x)
                    }
                })
                .collect::<Vec<_>>()
                .serialize(s),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<f64>>, D::Error> {
        let raw: Option<Vec<Entry>> = Option::deserialize(d)?;
        raw.map(|entries| {
            entries
                .into_iter()
                .map(|e| match e {
                    Entry::Num(x) => Ok(x),
                    Entry::Text(t) if t.eq_ignore_ascii_case("inf") => Ok(f64::INFINITY),
                    Entry::Text(t) => Err(serde::de::Error::custom(format!(
                        "invalid weight '{t}', expected a number or \"inf\""
                    ))),
                })
                .collect()
        })
        .transpose()
    }
}
