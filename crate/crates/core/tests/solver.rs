mod common;

use common::*;
use mist::solver::{
    fit, glm_mm_fit, glm_mm_map, lambda_path, mm_outer, one_step_fit, poisson_mm_fit,
    resolve_start, ist_minimize, Relaxation, StartPreset, StepSize, SurrogateKind,
};
use mist::{
    CoefficientVector, DesignMatrix, Family, FidelityModel, MistError, PenaltySpec, Problem,
    Response, SolverConfig, Termination,
};
use nalgebra::{DMatrix, DVector};

fn gaussian(x: DMatrix<f64>, y: Vec<f64>, intercept: bool) -> FidelityModel {
    FidelityModel::new(DesignMatrix::new(x, intercept).unwrap(), Response::gaussian(y)).unwrap()
}

#[test]
fn one_dimensional_update_is_exact() {
    let model = gaussian(DMatrix::from_element(1, 1, 1.0), vec![3.0], false);
    let problem = Problem::new(model, PenaltySpec::lasso(1.0)).unwrap();
    let config = SolverConfig {
        step_omega: StepSize::Fixed(2.0),
        ..SolverConfig::default()
    };
    let next = glm_mm_map(&problem, &config, &CoefficientVector::new(None, vec![0.0])).unwrap();
    assert_eq!(next.beta[0], 2.0);
    let r = glm_mm_fit(&problem, &config, &CoefficientVector::new(None, vec![0.0])).unwrap();
    assert_eq!(r.coef.beta[0], 2.0);
    assert_eq!(r.trace, vec![4.5, 2.5, 2.5]);
}

#[test]
fn step_beyond_admissible_range_is_rejected() {
    let model = gaussian(DMatrix::from_element(1, 1, 1.0), vec![3.0], false);
    let problem = Problem::new(model, PenaltySpec::lasso(1.0)).unwrap();
    let config = SolverConfig {
        step_omega: StepSize::Fixed(2.5),
        ..SolverConfig::default()
    };
    assert!(matches!(
        glm_mm_fit(&problem, &config, &CoefficientVector::new(None, vec![0.0])),
        Err(MistError::Validation(_))
    ));
}

#[test]
fn scad_beyond_flat_region_takes_gradient_step() {
    let mut rng = TestRng::new(3);
    let model = random_model(&mut rng, Family::Gaussian, 20, 3, false);
    let problem = Problem::new(model, PenaltySpec::scad(0.1, 3.7)).unwrap();
    let alpha = CoefficientVector::new(None, vec![2.0, -1.5, 3.0]);
    let config = SolverConfig::default();
    let omega = mist::solver::resolve_step(&problem, &config).unwrap();
    let grad = problem.model.gradient(&alpha).unwrap();
    let next = glm_mm_map(&problem, &config, &alpha).unwrap();
    let expected = &alpha.beta + grad * (omega / 2.0);
    assert!((next.beta - expected).amax() < 1e-14);
}

#[test]
fn ridge_contracts_when_gradient_vanishes() {
    // y fitted exactly by β = (1): gradient zero, SCAD slope zero at |β| = 1 > aλ
    let model = gaussian(DMatrix::from_element(1, 1, 1.0), vec![1.0], false);
    let problem = Problem::new(model, PenaltySpec::scad(0.1, 3.7).with_epsilon(0.5)).unwrap();
    let config = SolverConfig {
        step_omega: StepSize::Fixed(1.0),
        ..SolverConfig::default()
    };
    let next = glm_mm_map(&problem, &config, &CoefficientVector::new(None, vec![1.0])).unwrap();
    assert!((next.beta[0] - 1.0 / (1.0 + 0.1 * 0.5)).abs() < 1e-15);
}

#[test]
fn orthonormal_lasso_closed_form() {
    let mut rng = TestRng::new(11);
    for _ in 0..5 {
        let x = orthonormal_design(&mut rng, 30, 6);
        let y = rng.normal_vec(30) * 2.0;
        let lambda = 0.7;
        let closed = (x.transpose() * &y).map(|u| soft(u, lambda));
        let model = gaussian(x, y.as_slice().to_vec(), false);
        let problem = Problem::new(model, PenaltySpec::lasso(lambda)).unwrap();
        let exact = CoefficientVector::new(None, closed.as_slice().to_vec());
        assert!(problem.kkt_residual(&exact).unwrap() <= 1e-10);
        for r in [
            glm_mm_fit(&problem, &tight_config(), &CoefficientVector::zeros(6, false)).unwrap(),
            mm_outer(&problem, &tight_config(), &CoefficientVector::zeros(6, false)).unwrap(),
        ] {
            assert!((&r.coef.beta - &closed).norm() < 1e-8);
            assert!(r.kkt_residual < 1e-8);
        }
    }
}

#[test]
fn large_lambda_gives_zero() {
    let mut rng = TestRng::new(5);
    let model = random_model(&mut rng, Family::Gaussian, 25, 4, true);
    let y = match model.response() {
        Response::Gaussian { y } => y.clone(),
        _ => unreachable!(),
    };
    let centered = y.add_scalar(-y.mean());
    let xt = model.design().matrix().transpose() * centered;
    let lambda = xt.amax() * 1.01;
    let problem = Problem::new(model, PenaltySpec::lasso(lambda)).unwrap();
    let r = glm_mm_fit(&problem, &tight_config(), &zero_start(&problem.model)).unwrap();
    assert!(r.coef.beta.iter().all(|b| *b == 0.0));
    assert!((r.coef.intercept.unwrap() - y.mean()).abs() < 1e-8);
}

#[test]
fn stationary_start_is_returned_after_one_iteration() {
    let mut rng = TestRng::new(6);
    let model = random_model(&mut rng, Family::Logistic, 60, 4, true);
    let problem = Problem::new(model, PenaltySpec::lasso(2.0)).unwrap();
    let config = SolverConfig {
        coef_tol: 1e-13,
        obj_tol: 1e-30,
        ..tight_config()
    };
    let first = glm_mm_fit(&problem, &config, &zero_start(&problem.model)).unwrap();
    let again = glm_mm_fit(&problem, &SolverConfig::default(), &first.coef).unwrap();
    assert_eq!(again.outer_iters, 1);
    assert!((&again.coef.to_full() - &first.coef.to_full()).norm() < 1e-12);
    let again = mm_outer(&problem, &SolverConfig::default(), &first.coef).unwrap();
    assert_eq!(again.outer_iters, 1);
}

#[test]
fn max_outer_reports_max_iter() {
    let mut rng = TestRng::new(8);
    let model = random_model(&mut rng, Family::Gaussian, 30, 5, false);
    let problem = Problem::new(model, PenaltySpec::lasso(0.5)).unwrap();
    let config = SolverConfig {
        max_outer: 1,
        ..SolverConfig::default()
    };
    let r = glm_mm_fit(&problem, &config, &zero_start(&problem.model)).unwrap();
    assert_eq!(r.termination, Termination::MaxIter);
    assert_eq!(r.outer_iters, 1);
    assert_eq!(r.map_evals, 1);
    assert_eq!(r.trace.len(), 2);
}

#[test]
fn poisson_single_observation() {
    let model = FidelityModel::new(
        DesignMatrix::new(DMatrix::from_element(1, 1, 1.0), false).unwrap(),
        Response::poisson(vec![1.0], None),
    )
    .unwrap();
    let problem = Problem::new(model, PenaltySpec::lasso(1e-300)).unwrap();
    let r = poisson_mm_fit(&problem, &tight_config(), &CoefficientVector::new(None, vec![0.8])).unwrap();
    assert!(r.coef.beta[0].abs() < 1e-10);
}

#[test]
fn poisson_zero_counts_shrink_to_zero() {
    let mut rng = TestRng::new(9);
    let x = rng.normal_matrix(15, 3).abs();
    let model = FidelityModel::new(
        DesignMatrix::new(x, false).unwrap(),
        Response::poisson(vec![0.0; 15], None),
    )
    .unwrap();
    let problem = Problem::new(model, PenaltySpec::lasso(50.0)).unwrap();
    let r = poisson_mm_fit(&problem, &tight_config(), &CoefficientVector::zeros(3, false)).unwrap();
    assert!(r.coef.beta.iter().all(|b| *b == 0.0));
}

#[test]
fn poisson_mle_is_a_fixed_point_without_penalty() {
    let mut rng = TestRng::new(10);
    let model = random_model(&mut rng, Family::Poisson, 80, 3, true);
    let mle = model.mle().unwrap();
    let problem = Problem::new(model, PenaltySpec::lasso(1e-300)).unwrap();
    let r = poisson_mm_fit(&problem, &tight_config(), &mle).unwrap();
    assert_eq!(r.outer_iters, 1);
    assert!((r.coef.to_full() - mle.to_full()).norm() < 1e-8);
}

#[test]
fn poisson_through_quadratic_update_needs_a_region() {
    let mut rng = TestRng::new(12);
    let model = random_model(&mut rng, Family::Poisson, 40, 3, false);
    let problem = Problem::new(model, PenaltySpec::lasso(1.0)).unwrap();
    let start = CoefficientVector::zeros(3, false);
    assert!(matches!(
        glm_mm_fit(&problem, &SolverConfig::default(), &start),
        Err(MistError::NotGloballyLipschitz)
    ));
    let config = SolverConfig {
        region_radius: Some(3.0),
        ..tight_config()
    };
    let a = glm_mm_fit(&problem, &config, &start).unwrap();
    let b = poisson_mm_fit(&problem, &tight_config(), &start).unwrap();
    assert!((a.coef.beta - b.coef.beta).norm() < 1e-6);
}

#[test]
fn one_step_lasso_matches_direct_inner_solve() {
    let mut rng = TestRng::new(13);
    let model = random_model(&mut rng, Family::Gaussian, 50, 5, false);
    let x = model.design().matrix().clone();
    let y = match model.response() {
        Response::Gaussian { y } => y.clone(),
        _ => unreachable!(),
    };
    let lambda = 3.0;
    let problem = Problem::new(model, PenaltySpec::lasso(lambda)).unwrap();
    let config = tight_config();
    let r = one_step_fit(&problem, &config).unwrap();
    let l = x.tr_mul(&x).symmetric_eigenvalues().max();
    let direct = ist_minimize(
        |b| Ok(x.tr_mul(&(&x * b - &y))),
        &DVector::from_element(5, lambda),
        1.0 / l,
        &DVector::zeros(5),
        &Relaxation::default(),
        1e-13,
        1_000_000,
    )
    .unwrap();
    assert!((&r.coef.beta - &direct.solution).norm() < 1e-9);
    let oracle = cd_lasso(&x, &y, lambda);
    assert!((&r.coef.beta - oracle).norm() < 1e-9);
    assert_eq!(r.outer_iters, 1);
    assert_eq!(r.trace.len(), 2);
}

#[test]
fn one_step_with_zero_thresholds_returns_mle() {
    let mut rng = TestRng::new(14);
    let model = random_model(&mut rng, Family::Logistic, 200, 3, true);
    let mle = model.mle().unwrap();
    // every |β̂_j| exceeds aλ so the SCAD slope vanishes
    let smallest = mle.beta.amin();
    let problem = Problem::new(model, PenaltySpec::scad(smallest / 4.0, 3.7)).unwrap();
    let r = one_step_fit(&problem, &tight_config()).unwrap();
    assert!((r.coef.to_full() - mle.to_full()).norm() < 1e-9);
}

#[test]
fn one_step_needs_more_observations_than_coefficients() {
    let mut rng = TestRng::new(15);
    let model = random_model(&mut rng, Family::Gaussian, 4, 6, false);
    let problem = Problem::new(model, PenaltySpec::scad(1.0, 3.7)).unwrap();
    assert!(matches!(one_step_fit(&problem, &SolverConfig::default()), Err(MistError::NoMle(_))));
}

#[test]
fn explicit_linearized_surrogate_rejects_flat_penalties() {
    let mut rng = TestRng::new(16);
    let model = random_model(&mut rng, Family::Gaussian, 30, 3, false);
    let problem = Problem::new(model, PenaltySpec::mcp(0.5, 3.0)).unwrap();
    let config = SolverConfig {
        surrogate: SurrogateKind::Lla,
        ..SolverConfig::default()
    };
    assert!(mm_outer(&problem, &config, &zero_start(&problem.model)).is_err());
    let quad = SolverConfig {
        surrogate: SurrogateKind::Quadratic,
        ..tight_config()
    };
    let a = mm_outer(&problem, &quad, &zero_start(&problem.model)).unwrap();
    let b = glm_mm_fit(&problem, &tight_config(), &zero_start(&problem.model)).unwrap();
    assert!(a.kkt_residual < 1e-6 && b.kkt_residual < 1e-6);
}

#[test]
fn pinned_coordinates_stay_at_zero() {
    let mut rng = TestRng::new(17);
    let model = random_model(&mut rng, Family::Gaussian, 40, 4, false);
    let weights = vec![1.0, f64::INFINITY, 0.5, 2.0];
    let problem = Problem::new(model, PenaltySpec::adaptive_lasso(0.5, weights)).unwrap();
    let start = CoefficientVector::new(None, vec![1.0, 1.0, 1.0, 1.0]);
    for r in [
        glm_mm_fit(&problem, &tight_config(), &start).unwrap(),
        mm_outer(&problem, &tight_config(), &start).unwrap(),
    ] {
        assert_eq!(r.coef.beta[1], 0.0);
        assert!(r.kkt_residual < 1e-6);
    }
}

#[test]
fn relaxed_inner_iterations_reach_the_same_solution() {
    let mut rng = TestRng::new(18);
    let model = random_model(&mut rng, Family::Logistic, 80, 4, true);
    let problem = Problem::new(model, PenaltySpec::log(0.5, 2.0)).unwrap();
    let relaxed = SolverConfig {
        relaxation: Relaxation::Schedule(vec![0.5, 0.75, 0.9, 1.0]),
        ..tight_config()
    };
    let a = mm_outer(&problem, &relaxed, &zero_start(&problem.model)).unwrap();
    let b = mm_outer(&problem, &tight_config(), &zero_start(&problem.model)).unwrap();
    assert!((a.coef.to_full() - b.coef.to_full()).norm() < 1e-7);
}

#[test]
fn start_presets() {
    let mut rng = TestRng::new(19);
    let model = random_model(&mut rng, Family::Gaussian, 40, 3, true);
    let problem = Problem::new(model, PenaltySpec::scad(0.5, 3.7)).unwrap();
    let config = tight_config();
    let zero = resolve_start(&problem, &config, StartPreset::Zero).unwrap();
    assert!(zero.beta.iter().all(|b| *b == 0.0) && zero.intercept == Some(0.0));
    let mle = resolve_start(&problem, &config, StartPreset::Mle).unwrap();
    assert_eq!(mle, problem.model.mle().unwrap());
    let one = resolve_start(&problem, &config, StartPreset::OneStep).unwrap();
    assert_eq!(one, one_step_fit(&problem, &config).unwrap().coef);
    assert_eq!("one-step".parse::<StartPreset>().unwrap(), StartPreset::OneStep);
}

#[test]
fn lambda_path_warm_starts() {
    let mut rng = TestRng::new(20);
    let model = random_model(&mut rng, Family::Gaussian, 40, 5, false);
    let problem = Problem::new(model, PenaltySpec::lasso(1.0)).unwrap();
    let grid = [100.0, 20.0, 5.0, 1.0, 0.1];
    let path = lambda_path(&problem, &grid, &tight_config(), &zero_start(&problem.model)).unwrap();
    assert_eq!(path.len(), grid.len());
    for (r, &lambda) in path.iter().zip(&grid) {
        let r = r.as_ref().unwrap();
        let cold = fit(
            &problem.with_penalty(PenaltySpec::lasso(lambda)).unwrap(),
            &tight_config(),
            &zero_start(&problem.model),
        )
        .unwrap();
        assert!((&r.coef.beta - cold.coef.beta).norm() < 1e-7);
    }
    assert!(lambda_path(&problem, &[], &tight_config(), &zero_start(&problem.model)).is_err());
}

#[test]
fn cox_fit_is_stationary() {
    let mut rng = TestRng::new(21);
    let model = random_model(&mut rng, Family::Cox, 60, 4, false);
    for penalty in [PenaltySpec::lasso(1.0), PenaltySpec::scad(0.5, 3.7)] {
        let problem = Problem::new(model.clone(), penalty).unwrap();
        let r = glm_mm_fit(&problem, &tight_config(), &zero_start(&problem.model)).unwrap();
        assert!(r.termination.converged());
        assert!(r.kkt_residual < 1e-5, "{}", r.kkt_residual);
    }
}
