use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Result};
use mist::accel::{accelerated_fit, AccelMode};
use mist::penalty::compute_adaptive_weights;
use mist::simlab::{compare_solutions, gen_dataset, replicate_seed, SimDataset, SimFamily, SimScenario};
use mist::solver::{lambda_path, mm_outer, one_step_fit, resolve_start, FitResult, StartPreset, Termination};
use mist::{CoefficientVector, PenaltyFamily, PenaltySpec, Problem, Response, SolverConfig};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::args::{BenchArgs, FitArgs, Format, Method, ModelArgs, PathArgs, ScenarioArgs, SimulateArgs};
use crate::data::{load_model, penalty, solver_config, start_from_file};
use crate::output::{csv_writer, fmt12, sink};
use crate::{error_json, CliError, Status};

fn start(arg: &str, problem: &Problem, config: &SolverConfig) -> Result<CoefficientVector> {
    if let Some(path) = arg.strip_prefix("file:") {
        return start_from_file(Path::new(path), &problem.model);
    }
    let preset: StartPreset = arg.parse()?;
    Ok(resolve_start(problem, config, preset)?)
}

fn status_of(termination: Termination) -> Status {
    if termination.converged() {
        Status::Converged
    } else {
        Status::MaxIter
    }
}

fn result_header(names: &[String], intercept: bool) -> Vec<String> {
    let mut h: Vec<String> = ["lambda", "objective", "kkt", "iters", "map_evals", "termination", "error"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    if intercept {
        h.push("intercept".into());
    }
    h.extend(names.iter().cloned());
    h
}

fn result_row(lambda: f64, result: &mist::Result<FitResult>) -> Vec<String> {
    match result {
        Ok(r) => {
            let mut row = vec![
                fmt12(lambda),
                fmt12(r.objective),
                fmt12(r.kkt_residual),
                r.outer_iters.to_string(),
                r.map_evals.to_string(),
                r.termination.name().into(),
                String::new(),
            ];
            row.extend(r.coef.intercept.map(fmt12));
            row.extend(r.coef.beta.iter().map(|&b| fmt12(b)));
            row
        }
        Err(e) => vec![
            fmt12(lambda),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            e.to_string(),
        ],
    }
}

fn problem_from(model_args: &ModelArgs, model: mist::FidelityModel, lambda: Option<f64>) -> Result<Problem> {
    let mut spec = penalty(&model_args.penalty_json, &model, model_args.gamma)?;
    if let Some(l) = lambda {
        spec = spec.with_lambda(l);
    }
    Ok(Problem::new(model, spec)?)
}

pub fn fit(args: &FitArgs) -> Result<Status> {
    let loaded = load_model(&args.data)?;
    let intercept = loaded.model.has_intercept();
    let problem = problem_from(&args.model, loaded.model, args.lambda)?;
    let config = solver_config(args.model.solver_json.as_deref())?;
    let from = start(&args.model.start, &problem, &config)?;
    let mode: AccelMode = args.accel.parse()?;
    let result = match args.method {
        Method::SingleMap => accelerated_fit(&problem, &config, &from, mode)?,
        Method::Outer if mode == AccelMode::Squarem => {
            bail!(CliError::validation("--accel squarem requires --method single-map".into()))
        }
        Method::Outer => mm_outer(&problem, &config, &from)?,
    };
    match args.out.format.unwrap_or(Format::Json) {
        Format::Json => {
            let mut out = sink(args.out.out.as_deref())?;
            writeln!(out, "{}", result.to_json(args.trace)?)?;
            out.flush()?;
        }
        Format::Csv => {
            let mut w = csv_writer(args.out.out.as_deref())?;
            w.write_record(result_header(&loaded.names, intercept))?;
            w.write_record(result_row(problem.penalty.lambda, &Ok(result.clone())))?;
            w.flush()?;
        }
    }
    Ok(status_of(result.termination))
}


pub fn path(args: &PathArgs) -> Result<Status> {
    let loaded = load_model(&args.data)?;
    let intercept = loaded.model.has_intercept();
    let mut grid = args.lambda.clone();
    grid.sort_by(|a, b| b.total_cmp(a));
    if grid.is_empty() {
        bail!(CliError::validation("lambda grid is empty".into()));
    }
    let problem = problem_from(&args.model, loaded.model, grid.first().copied())?;
    let config = solver_config(args.model.solver_json.as_deref())?;
    let from = start(&args.model.start, &problem, &config)?;
    let results = lambda_path(&problem, &grid, &config, &from)?;
    match args.out.format.unwrap_or(Format::Csv) {
        Format::Csv => {
            let mut w = csv_writer(args.out.out.as_deref())?;
            w.write_record(result_header(&loaded.names, intercept))?;
            for (&lambda, r) in grid.iter().zip(&results) {
                w.write_record(result_row(lambda, r))?;
            }
            w.flush()?;
        }
        Format::Json => {
            let rows = grid
                .iter()
                .zip(&results)
                .map(|(&lambda, r)| {
                    Ok(match r {
                        Ok(fit) => json!({"lambda": lambda, "result": serde_json::from_str::<Value>(&fit.to_json(false)?)?}),
                        Err(e) => json!({"lambda": lambda, "error": {"kind": e.kind(), "message": e.to_string()}}),
                    })
                })
                .collect::<Result<Vec<Value>>>()?;
            let mut out = sink(args.out.out.as_deref())?;
            writeln!(out, "{}", Value::Array(rows))?;
            out.flush()?;
        }
    }
    let failed = results.iter().filter(|r| r.is_err()).count();
    if failed > 0 {
        eprintln!(
            "{}",
            error_json("path", &format!("{failed} of {} lambda values failed", grid.len()))
        );
        return Ok(Status::Failed);
    }
    let all_converged = results.iter().flatten().all(|r| r.termination.converged());
    Ok(if all_converged { Status::Converged } else { Status::MaxIter })
}

fn scenario(args: &ScenarioArgs) -> Result<SimScenario> {
    let family: SimFamily = args.scenario.parse()?;
    let mut s = match family {
        SimFamily::LinearEx1 => SimScenario::example1(args.p.unwrap_or(35), args.rho, args.sigma, args.seed),
        SimFamily::LogisticEx2 => SimScenario::example2(args.q.unwrap_or(25), args.rho, args.seed),
        SimFamily::CoxSynthetic => SimScenario::cox(args.p.unwrap_or(10), 200, args.rho, args.seed),
    };
    if let Some(p) = args.p {
        s.p = p;
    }
    if args.q.is_some() {
        s.q = args.q;
    }
    if let Some(n) = args.n {
        s.n = n;
    }
    s.standardize = args.standardize;
    s.validate()?;
    Ok(s)
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(threads).build()?)
}

fn replicate(scenario: &SimScenario, b: usize) -> Result<SimDataset> {
    Ok(gen_dataset(&scenario.with_seed(replicate_seed(scenario.seed, b)))?)
}

fn dump_dataset(dir: &Path, data: &SimDataset, b: usize) -> Result<()> {
    fs::create_dir_all(dir)?;
    let path = dir.join(format!("{}_r{b}.csv", data.scenario.family.name()));
    let mut w = csv::Writer::from_path(path)?;
    let x = data.design.matrix();
    let mut header: Vec<String> = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
    let response: Vec<Vec<String>> = match &data.response {
        Response::Gaussian { y } | Response::Logistic { y } => {
            header.push("y".into());
            y.iter().map(|v| vec![format!("{v:e}")]).collect()
        }
        Response::Poisson { y, offsets } => {
            header.extend(["y".into(), "offset".into()]);
            y.iter().zip(offsets.iter()).map(|(v, d)| vec![format!("{v:e}"), format!("{d:e}")]).collect()
        }
        Response::Cox { time, status } => {
            header.extend(["time".into(), "status".into()]);
            time.iter()
                .zip(status)
                .map(|(t, s)| vec![format!("{t:e}"), u8::from(*s).to_string()])
                .collect()
        }
    };
    w.write_record(&header)?;
    for (i, tail) in response.into_iter().enumerate() {
        let mut row: Vec<String> = x.row(i).iter().map(|v| format!("{v:e}")).collect();
        row.extend(tail);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

const SIMULATE_HEADER: [&str; 22] = [
    "scenario",
    "p",
    "q",
    "n",
    "rho",
    "sigma",
    "seed",
    "replicate",
    "penalty",
    "lambda",
    "start",
    "iters",
    "map_evals",
    "termination",
    "objective",
    "onestep_objective",
    "norm_diff",
    "leq_onestep",
    "kkt",
    "estimation_error",
    "beta_true",
    "error",
];

struct SimulateSpec<'a> {
    scenario: &'a SimScenario,
    penalties: Vec<PenaltyFamily>,
    lambdas: &'a [f64],
    starts: Vec<StartPreset>,
    args: &'a SimulateArgs,
    config: SolverConfig,
}

fn penalty_spec(family: PenaltyFamily, lambda: f64, args: &SimulateArgs, weights: &dyn Fn() -> Result<Vec<f64>>) -> Result<PenaltySpec> {
    Ok(match family {
        PenaltyFamily::Lasso => PenaltySpec::lasso(lambda),
        PenaltyFamily::AdaptiveLasso => PenaltySpec::adaptive_lasso(lambda, weights()?),
        PenaltyFamily::ElasticNet => PenaltySpec::elastic_net(lambda, args.epsilon),
        PenaltyFamily::AdaptiveElasticNet => PenaltySpec::adaptive_elastic_net(lambda, args.epsilon, weights()?),
        PenaltyFamily::Scad => PenaltySpec::scad(lambda, args.a),
        PenaltyFamily::Mcp => PenaltySpec::mcp(lambda, args.a),
        PenaltyFamily::Geman => PenaltySpec::geman(lambda, args.delta),
        PenaltyFamily::Log => PenaltySpec::log(lambda, args.delta),
    })
}

fn simulate_replicate(spec: &SimulateSpec, b: usize) -> Result<Vec<Vec<String>>> {
    let data = replicate(spec.scenario, b)?;
    if let Some(dir) = &spec.args.dump_dir {
        dump_dataset(dir, &data, b)?;
    }
    let model = std::sync::Arc::new(data.model()?);
    let s = spec.scenario;
    let beta_true = data.beta_true.iter().map(|&v| fmt12(v)).collect::<Vec<_>>().join(";");
    let weights = || -> Result<Vec<f64>> {
        Ok(compute_adaptive_weights(model.mle()?.beta.as_slice(), spec.args.gamma)?)
    };
    let mut rows = Vec::new();
    for &family in &spec.penalties {
        for &lambda in spec.lambdas {
            let prefix = vec![
                s.family.name().to_string(),
                s.p.to_string(),
                s.resolved_q().to_string(),
                s.n.to_string(),
                fmt12(s.rho),
                fmt12(s.sigma),
                s.seed.to_string(),
                b.to_string(),
                family.name().to_string(),
                fmt12(lambda),
            ];
            let problem = penalty_spec(family, lambda, spec.args, &weights)
                .and_then(|p| Ok(Problem::new(model.clone(), p)?));
            let reference = problem
                .as_ref()
                .map_err(|e| e.to_string())
                .and_then(|p| one_step_fit(p, &spec.config).map_err(|e| e.to_string()));
            for &preset in &spec.starts {
                let mut row = prefix.clone();
                row.push(preset.name().into());
                let outcome = problem.as_ref().map_err(|e| e.to_string()).and_then(|p| {
                    let reference = reference.as_ref().map_err(|e| format!("one-step reference: {e}"))?;
                    let from = resolve_start(p, &spec.config, preset).map_err(|e| e.to_string())?;
                    let fit = mm_outer(p, &spec.config, &from).map_err(|e| e.to_string())?;
                    let cmp = compare_solutions(&fit, reference, p).map_err(|e| e.to_string())?;
                    Ok((fit, cmp))
                });
                match outcome {
                    Ok((fit, cmp)) => {
                        let est_err = (&fit.coef.beta - &data.beta_true).norm();
                        row.extend([
                            fit.outer_iters.to_string(),
                            fit.map_evals.to_string(),
                            fit.termination.name().into(),
                            fmt12(cmp.obj_a),
                            fmt12(cmp.obj_b),
                            fmt12(cmp.norm_diff),
                            cmp.a_leq_b.to_string(),
                            fmt12(fit.kkt_residual),
                            fmt12(est_err),
                            beta_true.clone(),
                            String::new(),
                        ]);
                    }
                    Err(message) => {
                        row.extend(std::iter::repeat_n(String::new(), 9));
                        row.push(beta_true.clone());
                        row.push(message);
                    }
                }
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

pub fn simulate(args: &SimulateArgs, threads: usize) -> Result<Status> {
    let scenario = scenario(&args.scenario)?;
    let penalties = args
        .penalties
        .iter()
        .map(|s| s.parse::<PenaltyFamily>())
        .collect::<mist::Result<Vec<_>>>()?;
    let starts = args
        .starts
        .iter()
        .map(|s| s.parse::<StartPreset>())
        .collect::<mist::Result<Vec<_>>>()?;
    if args.lambda.is_empty() || args.lambda.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
        bail!(CliError::validation("lambda values must be positive".into()));
    }
    let spec = SimulateSpec {
        scenario: &scenario,
        penalties,
        lambdas: &args.lambda,
        starts,
        args,
        config: solver_config(args.solver_json.as_deref())?,
    };
    let per_replicate = pool(threads)?.install(|| {
        (0..args.scenario.replicates)
            .into_par_iter()
            .map(|b| simulate_replicate(&spec, b))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut w = csv_writer(args.out.as_deref())?;
    w.write_record(SIMULATE_HEADER)?;
    let mut status = Status::Converged;
    for row in per_replicate.into_iter().flatten() {
        if row[13] == Termination::MaxIter.name() {
            status = status.max(Status::MaxIter);
        }
        if !row[21].is_empty() {
            status = Status::Failed;
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    if status == Status::Failed {
        eprintln!("{}", error_json("simulate", "some fits failed; see the error column"));
    }
    Ok(status)
}

pub const BENCH_HEADER: [&str; 6] = ["scenario", "penalty", "mode", "map_evals", "wall_seconds", "objective"];

pub fn bench_accel(args: &BenchArgs, threads: usize) -> Result<Status> {
    let scenario = scenario(&args.scenario)?;
    let config = solver_config(args.solver_json.as_deref())?;
    let per_replicate = pool(threads)?.install(|| {
        (0..args.scenario.replicates)
            .into_par_iter()
            .map(|b| -> Result<Vec<Vec<String>>> {
                let data = replicate(&scenario, b)?;
                let model = data.model()?;
                let spec = penalty(&args.penalty_json, &model, 1.0)?;
                let problem = Problem::new(model, spec)?;
                let from = CoefficientVector::zeros(problem.model.p(), problem.model.has_intercept());
                let mut rows = Vec::new();
                for mode in [AccelMode::Plain, AccelMode::Squarem] {
                    let clock = Instant::now();
                    let fit = accelerated_fit(&problem, &config, &from, mode)?;
                    let wall = clock.elapsed().as_secs_f64();
                    rows.push(vec![
                        format!("{}/r{b}", scenario.family.name()),
                        problem.penalty.family.name().to_string(),
                        mode.name().to_string(),
                        fit.map_evals.to_string(),
                        fmt12(wall),
                        fmt12(fit.objective),
                    ]);
                }
                Ok(rows)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut w = csv_writer(args.out.as_deref())?;
    w.write_record(BENCH_HEADER)?;
    for row in per_replicate.into_iter().flatten() {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(Status::Converged)
}

/// `p̃(r)` and `p̃′(r)` for every family on `r ∈ [0, 5λ]`.
pub fn penalty_grid(out: &Path, lambda: f64) -> Result<Status> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        bail!(CliError::validation(format!("lambda must be positive, got {lambda}")));
    }
    let mut w = csv_writer(Some(out))?;
    w.write_record(["family", "lambda", "r", "value", "derivative"])?;
    for family in PenaltyFamily::ALL {
        let spec = match family {
            PenaltyFamily::Lasso => PenaltySpec::lasso(lambda),
            PenaltyFamily::AdaptiveLasso => PenaltySpec::adaptive_lasso(lambda, vec![1.0]),
            PenaltyFamily::ElasticNet => PenaltySpec::elastic_net(lambda, 0.5),
            PenaltyFamily::AdaptiveElasticNet => PenaltySpec::adaptive_elastic_net(lambda, 0.5, vec![1.0]),
            PenaltyFamily::Scad => PenaltySpec::scad(lambda, mist::penalty::DEFAULT_A),
            PenaltyFamily::Mcp => PenaltySpec::mcp(lambda, mist::penalty::DEFAULT_A),
            PenaltyFamily::Geman => PenaltySpec::geman(lambda, 1.0),
            PenaltyFamily::Log => PenaltySpec::log(lambda, 1.0),
        };
        for k in 0..=500 {
            let r = 5.0 * lambda * k as f64 / 500.0;
            w.write_record([
                family.name().to_string(),
                fmt12(lambda),
                fmt12(r),
                fmt12(spec.value(0, r)?),
                fmt12(spec.derivative(0, r)?),
            ])?;
        }
    }
    w.flush()?;
    Ok(Status::Converged)
}
