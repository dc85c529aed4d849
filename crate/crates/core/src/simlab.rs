//! Synthetic benchmark designs and solution comparisons.
//!
//! Draws are deterministic for a given seed: ChaCha20 supplies the bits,
//! uniforms come from the top 53 bits shifted into the open unit interval and
//! normals from the inverse normal CDF.

use nalgebra::{DMatrix, DVector};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{check_len, MistError, Result};
use crate::fidelity::{DesignMatrix, FidelityModel, Response};
use crate::solver::{FitResult, Problem};

/// Default number of replicates per configuration.
pub const DEFAULT_REPLICATES: usize = 10;
/// Fraction of censored subjects in the Cox generator.
pub const COX_CENSORING: f64 = 0.4;

/// `Σ_jk = ρ^|j−k|`.
pub fn covariance_ar1(p: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |j, k| {
        if j == k {
            1.0
        } else {
            rho.powi(j.abs_diff(k) as i32)
        }
    })
}

/// `scale · P` with unit diagonal and every off-diagonal equal to `ρ`.
pub fn covariance_equicorr(p: usize, rho: f64, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |j, k| if j == k { scale } else { scale * rho })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimFamily {
    /// Linear model with AR(1) predictors and `β* = (3·1_q, 0)`.
    LinearEx1,
    /// Logistic model with equicorrelated predictors and alternating,
    /// slowly decaying coefficients.
    LogisticEx2,
    /// Exponential survival times with uniform censoring.
    CoxSynthetic,
}

impl SimFamily {
    pub fn name(self) -> &'static str {
        match self {
            SimFamily::LinearEx1 => "linear_ex1",
            SimFamily::LogisticEx2 => "logistic_ex2",
            SimFamily::CoxSynthetic => "cox_synthetic",
        }
    }

    /// Whether fits on this family's data carry an intercept.
    pub fn has_intercept(self) -> bool {
        self == SimFamily::LogisticEx2
    }
}

impl std::fmt::Display for SimFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SimFamily {
    type Err = MistError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "linear_ex1" | "linear" | "ex1" => Ok(SimFamily::LinearEx1),
            "logistic_ex2" | "logistic" | "ex2" => Ok(SimFamily::LogisticEx2),
            "cox_synthetic" | "cox" => Ok(SimFamily::CoxSynthetic),
            _ => Err(MistError::Validation(format!("unknown simulation family '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub family: SimFamily,
    pub p: usize,
    /// Number of nonzero true coefficients; family default when absent.
    pub q: Option<usize>,
    pub n: usize,
    pub rho: f64,
    /// Noise standard deviation of the linear model.
    pub sigma: f64,
    pub seed: u64,
    /// Center and scale each design column to unit sample variance.
    #[serde(default)]
    pub standardize: bool,
}

impl SimScenario {
    /// `N = 100` observations from the linear model.
    pub fn example1(p: usize, rho: f64, sigma: f64, seed: u64) -> Self {
        SimScenario {
            family: SimFamily::LinearEx1,
            p,
            q: None,
            n: 100,
            rho,
            sigma,
            seed,
            standardize: false,
        }
    }

    /// `N = 1000`, `p = 100` logistic design with `q` active predictors.
    pub fn example2(q: usize, rho: f64, seed: u64) -> Self {
        SimScenario {
            family: SimFamily::LogisticEx2,
            p: 100,
            q: Some(q),
            n: 1000,
            rho,
            sigma: 1.0,
            seed,
            standardize: false,
        }
    }

    pub fn cox(p: usize, n: usize, rho: f64, seed: u64) -> Self {
        SimScenario {
            family: SimFamily::CoxSynthetic,
            p,
            q: None,
            n,
            rho,
            sigma: 1.0,
            seed,
            standardize: false,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        SimScenario {
            seed,
            ..self.clone()
        }
    }

    /// `q`, defaulting to `3⌊p/9⌋` (at least 1 for the Cox stand-in).
    pub fn resolved_q(&self) -> usize {
        self.q.unwrap_or(match self.family {
            SimFamily::LinearEx1 => 3 * (self.p / 9),
            SimFamily::LogisticEx2 => 25.min(self.p),
            SimFamily::CoxSynthetic => (3 * (self.p / 9)).max(1).min(self.p),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(MistError::Validation(m));
        if self.p == 0 || self.n == 0 {
            return bad("p and N must be positive".into());
        }
        if self.resolved_q() > self.p {
            return bad(format!("q = {} exceeds p = {}", self.resolved_q(), self.p));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return bad(format!("rho must lie in [0, 1), got {}", self.rho));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        Ok(())
    }

    pub fn beta_true(&self) -> DVector<f64> {
        let q = self.resolved_q();
        DVector::from_fn(self.p, |j, _| {
            if j >= q {
                return 0.0;
            }
            match self.family {
                SimFamily::LinearEx1 => 3.0,
                SimFamily::LogisticEx2 => {
                    let one_based = (j + 1) as f64;
                    let sign = if (j + 1) % 2 == 0 { 1.0 } else { -1.0 };
                    3.0 * sign * (-2.0 * (one_based - 1.0) / 200.0).exp()
                }
                SimFamily::CoxSynthetic => 1.0,
            }
        })
    }
}

/// Seed of replicate `index` derived from a base seed.
pub fn replicate_seed(seed: u64, index: usize) -> u64 {
    seed ^ index as u64
}

#[derive(Clone, Debug)]
pub struct SimDataset {
    pub design: DesignMatrix,
    pub response: Response,
    pub beta_true: DVector<f64>,
    pub scenario: SimScenario,
}

impl SimDataset {
    pub fn model(&self) -> Result<FidelityModel> {
        FidelityModel::new(self.design.clone(), self.response.clone())
    }
}

struct Draws {
    rng: ChaCha20Rng,
    normal: Normal,
}

impl Draws {
    fn new(seed: u64) -> Self {
        Draws {
            rng: ChaCha20Rng::seed_from_u64(seed),
            normal: Normal::standard(),
        }
    }

    /// Uniform on the open interval `(0, 1)`.
    fn uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64
    }

    fn normal(&mut self) -> f64 {
        let u = self.uniform();
        self.normal.inverse_cdf(u)
    }
}

pub fn gen_dataset(scenario: &SimScenario) -> Result<SimDataset> {
    scenario.validate()?;
    let (n, p) = (scenario.n, scenario.p);
    let beta = scenario.beta_true();
    let mut draws = Draws::new(scenario.seed);
    let mut x = DMatrix::zeros(n, p);

    let ar1_factor = match scenario.family {
        SimFamily::LogisticEx2 => None,
        _ => Some(
            covariance_ar1(p, scenario.rho)
                .cholesky()
                .ok_or_else(|| MistError::Domain("covariance is not positive definite".into()))?
                .unpack(),
        ),
    };
    let mut z = DVector::zeros(p);
    for i in 0..n {
        match &ar1_factor {
            Some(l) => {
                for v in z.iter_mut() {
                    *v = draws.normal();
                }
                x.row_mut(i).copy_from(&(l * &z).transpose());
            }
            None => {
                // equicorrelated with scale 1/9: √ρ z₀ 1 + √(1−ρ) z, then scaled
                let common = draws.normal() * scenario.rho.sqrt();
                let own = (1.0 - scenario.rho).sqrt();
                for j in 0..p {
                    x[(i, j)] = (common + own * draws.normal()) / 3.0;
                }
            }
        }
    }
    if scenario.standardize {
        standardize_columns(&mut x);
    }

    let eta = &x * &beta;
    let response = match scenario.family {
        SimFamily::LinearEx1 => {
            let y: Vec<f64> = (0..n).map(|i| eta[i] + scenario.sigma * draws.normal()).collect();
            Response::gaussian(y)
        }
        SimFamily::LogisticEx2 => {
            let y: Vec<f64> = (0..n)
                .map(|i| {
                    let prob = 1.0 / (1.0 + (-eta[i]).exp());
                    f64::from(u8::from(draws.uniform() < prob))
                })
                .collect();
            Response::logistic(y)
        }
        SimFamily::CoxSynthetic => cox_response(&eta, &mut draws),
    };
    Ok(SimDataset {
        design: DesignMatrix::new(x, scenario.family.has_intercept())?,
        response,
        beta_true: beta,
        scenario: scenario.clone(),
    })
}

fn standardize_columns(x: &mut DMatrix<f64>) {
    let n = x.nrows() as f64;
    for mut col in x.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
        let sd = (col.norm_squared() / (n - 1.0).max(1.0)).sqrt();
        if sd > 0.0 {
            col /= sd;
        }
    }
}

/// Event times `T = −ln U / e^η` and censoring times `C = c·V`, with `c`
/// placed so that exactly `round(0.4 N)` subjects are censored.
fn cox_response(eta: &DVector<f64>, draws: &mut Draws) -> Response {
    let n = eta.len();
    let mut event = Vec::with_capacity(n);
    let mut scale = Vec::with_capacity(n);
    for &e in eta.iter() {
        event.push(-draws.uniform().ln() / e.exp());
        scale.push(draws.uniform());
    }
    // subject i is censored iff c < T_i / V_i
    let mut ratios: Vec<f64> = event.iter().zip(&scale).map(|(t, v)| t / v).collect();
    ratios.sort_by(f64::total_cmp);
    let censored = (COX_CENSORING * n as f64).round() as usize;
    let c = if censored == 0 {
        2.0 * ratios[n - 1]
    } else {
        let cut = n - censored;
        0.5 * (ratios[cut - 1] + ratios[cut])
    };
    let mut time = Vec::with_capacity(n);
    let mut status = Vec::with_capacity(n);
    for i in 0..n {
        let cens = c * scale[i];
        time.push(event[i].min(cens));
        status.push(event[i] <= cens);
    }
    Response::cox(time, status)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRecord {
    pub norm_diff: f64,
    pub obj_a: f64,
    pub obj_b: f64,
    pub a_leq_b: bool,
}

/// Distance between two fits of the same problem and which one attains the
/// lower objective (with `1e-10` slack in favour of `a`).
pub fn compare_solutions(a: &FitResult, b: &FitResult, problem: &Problem) -> Result<ComparisonRecord> {
    let (fa, fb) = (a.coef.to_full(), b.coef.to_full());
    check_len(fa.len(), fb.len())?;
    let obj_a = problem.total_objective(&a.coef)?;
    let obj_b = problem.total_objective(&b.coef)?;
    Ok(ComparisonRecord {
        norm_diff: (fa - fb).norm(),
        obj_a,
        obj_b,
        a_leq_b: obj_a <= obj_b + 1e-10,
    })
}
