use mist::simlab::{compare_solutions, gen_dataset, SimScenario};
use mist::solver::{FitResult, Termination};
use mist::{CoefficientVector, DesignMatrix, FidelityModel, PenaltySpec, Problem, Response};

fn result(beta: Vec<f64>) -> FitResult {
    FitResult {
        coef: CoefficientVector::new(None, beta),
        objective: 0.0,
        trace: vec![0.0],
        outer_iters: 1,
        map_evals: 1,
        kkt_residual: 0.0,
        termination: Termination::CoefTol,
        step_halvings: 0,
    }
}

fn problem() -> Problem {
    let rows = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![1.0, 1.0, 1.0]];
    let model = FidelityModel::new(
        DesignMatrix::from_rows(&rows, false).unwrap(),
        Response::gaussian(vec![1.0, 2.0, 0.5, 3.0]),
    )
    .unwrap();
    Problem::new(model, PenaltySpec::lasso(0.5)).unwrap()
}

#[test]
fn identical_fits_compare_equal() {
    let a = result(vec![0.5, 1.0, 0.0]);
    let rec = compare_solutions(&a, &a, &problem()).unwrap();
    assert_eq!(rec.norm_diff, 0.0);
    assert!(rec.a_leq_b);
    assert_eq!(rec.obj_a, rec.obj_b);
}

#[test]
fn three_four_five() {
    let rec = compare_solutions(&result(vec![0.0; 3]), &result(vec![3.0, 4.0, 0.0]), &problem()).unwrap();
    assert_eq!(rec.norm_diff, 5.0);
    let p = problem();
    assert_eq!(rec.obj_b, p.total_objective(&result(vec![3.0, 4.0, 0.0]).coef).unwrap());
}

#[test]
fn mismatched_lengths_are_rejected() {
    assert!(compare_solutions(&result(vec![0.0; 3]), &result(vec![0.0; 2]), &problem()).is_err());
}

#[test]
fn datasets_are_byte_identical_across_calls() {
    for scenario in [
        SimScenario::example1(35, 0.5, 1.0, 42),
        SimScenario::example2(25, 0.5, 42),
        SimScenario::cox(10, 50, 0.3, 42),
    ] {
        let a = gen_dataset(&scenario).unwrap();
        let b = gen_dataset(&scenario).unwrap();
        let bits = |m: &nalgebra::DMatrix<f64>| m.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a.design.matrix()), bits(b.design.matrix()));
        assert_eq!(format!("{:?}", a.response), format!("{:?}", b.response));
    }
}
