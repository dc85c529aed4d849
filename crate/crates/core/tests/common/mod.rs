#![allow(dead_code)]

use mist::penalty::compute_adaptive_weights;
use mist::{
    CoefficientVector, DesignMatrix, Family, FidelityModel, PenaltyFamily, PenaltySpec, Response,
    SolverConfig,
};
use nalgebra::{DMatrix, DVector};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct TestRng(ChaCha8Rng);

impl TestRng {
    pub fn new(seed: u64) -> Self {
        TestRng(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn uniform(&mut self) -> f64 {
        ((self.0.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.uniform() * n as f64) as usize
    }

    /// Box–Muller.
    pub fn normal(&mut self) -> f64 {
        let (u, v) = (self.uniform(), self.uniform());
        (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
    }

    pub fn normal_vec(&mut self, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| self.normal())
    }

    pub fn normal_matrix(&mut self, n: usize, p: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, p, |_, _| self.normal())
    }

    /// Knuth's multiplication method; fine for small means.
    pub fn poisson(&mut self, mean: f64) -> f64 {
        let limit = (-mean).exp();
        let mut k = 0.0;
        let mut prod = self.uniform();
        while prod > limit {
            k += 1.0;
            prod *= self.uniform();
        }
        k
    }
}

/// `n × p` matrix with orthonormal columns.
pub fn orthonormal_design(rng: &mut TestRng, n: usize, p: usize) -> DMatrix<f64> {
    let q = rng.normal_matrix(n, p).qr().q();
    q.columns(0, p).into_owned()
}

/// Random model of the given family. Predictors are scaled to keep Poisson
/// means and logistic probabilities moderate.
pub fn random_model(
    rng: &mut TestRng,
    family: Family,
    n: usize,
    p: usize,
    intercept: bool,
) -> FidelityModel {
    let scale = match family {
        Family::Gaussian => 1.0,
        _ => 0.5,
    };
    let x = rng.normal_matrix(n, p) * scale;
    let beta = DVector::from_fn(p, |j, _| if j % 2 == 0 { 1.0 } else { -0.5 } * 0.8);
    let eta = &x * &beta;
    let intercept = intercept && family != Family::Cox;
    let response = match family {
        Family::Gaussian => Response::gaussian((0..n).map(|i| eta[i] + rng.normal()).collect()),
        Family::Logistic => Response::logistic(
            (0..n)
                .map(|i| f64::from(u8::from(rng.uniform() < 1.0 / (1.0 + (-eta[i]).exp()))))
                .collect(),
        ),
        Family::Poisson => {
            let offsets: Vec<f64> = (0..n).map(|_| rng.range(0.5, 2.0)).collect();
            let y = (0..n).map(|i| rng.poisson(offsets[i] * eta[i].exp())).collect();
            Response::poisson(y, Some(offsets))
        }
        Family::Cox => {
            let mut time = Vec::with_capacity(n);
            let mut status = Vec::with_capacity(n);
            for i in 0..n {
                let t = -rng.uniform().ln() / eta[i].exp();
                let c = -rng.uniform().ln() * 2.0;
                time.push(t.min(c));
                status.push(t <= c);
            }
            status[0] = true;
            Response::cox(time, status)
        }
    };
    FidelityModel::new(DesignMatrix::new(x, intercept).unwrap(), response).unwrap()
}

pub const ALL_FAMILIES: [Family; 4] = [Family::Gaussian, Family::Logistic, Family::Poisson, Family::Cox];

/// A penalty of the given family at `lambda`; adaptive weights come from
/// `pilot` with exponent 1.
pub fn penalty_for(family: PenaltyFamily, lambda: f64, pilot: &[f64]) -> PenaltySpec {
    let weights = || compute_adaptive_weights(pilot, 1.0).unwrap();
    match family {
        PenaltyFamily::Lasso => PenaltySpec::lasso(lambda),
        PenaltyFamily::AdaptiveLasso => PenaltySpec::adaptive_lasso(lambda, weights()),
        PenaltyFamily::ElasticNet => PenaltySpec::elastic_net(lambda, 0.5),
        PenaltyFamily::AdaptiveElasticNet => {
            PenaltySpec::adaptive_elastic_net(lambda, 0.5, weights())
        }
        PenaltyFamily::Scad => PenaltySpec::scad(lambda, 3.7),
        PenaltyFamily::Mcp => PenaltySpec::mcp(lambda, 3.0),
        PenaltyFamily::Geman => PenaltySpec::geman(lambda, 2.0),
        PenaltyFamily::Log => PenaltySpec::log(lambda, 2.0),
    }
}

/// Tolerances tight enough for stationarity checks at the `1e-5` level.
pub fn tight_config() -> SolverConfig {
    SolverConfig {
        coef_tol: 1e-10,
        obj_tol: 1e-15,
        inner_tol: 1e-12,
        max_outer: 500_000,
        ..SolverConfig::default()
    }
}

/// Cyclic coordinate descent for `½‖y − Xβ‖² + λ‖β‖₁` (no intercept).
pub fn cd_lasso(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> DVector<f64> {
    let p = x.ncols();
    let col_sq: Vec<f64> = (0..p).map(|j| x.column(j).norm_squared()).collect();
    let mut beta = DVector::zeros(p);
    let mut resid = y.clone();
    for _ in 0..1_000_000 {
        let mut largest: f64 = 0.0;
        for j in 0..p {
            if col_sq[j] == 0.0 {
                continue;
            }
            let old = beta[j];
            let rho: f64 = x.column(j).dot(&resid) + col_sq[j] * old;
            let new = rho.signum() * (rho.abs() - lambda).max(0.0) / col_sq[j];
            if new != old {
                resid.axpy(old - new, &x.column(j), 1.0);
                beta[j] = new;
                largest = largest.max((new - old).abs());
            }
        }
        if largest < 1e-15 {
            break;
        }
    }
    beta
}

pub fn lasso_objective(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64, beta: &DVector<f64>) -> f64 {
    0.5 * (y - x * beta).norm_squared() + lambda * beta.lp_norm(1)
}

pub fn soft(u: f64, v: f64) -> f64 {
    u.signum() * (u.abs() - v).max(0.0)
}

pub fn zero_start(model: &FidelityModel) -> CoefficientVector {
    CoefficientVector::zeros(model.p(), model.has_intercept())
}

/// True when `trace` never increases by more than `slack`.
pub fn is_monotone(trace: &[f64], slack: f64) -> bool {
    trace.windows(2).all(|w| w[1] <= w[0] + slack)
}
