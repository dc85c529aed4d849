//! CSV datasets and the JSON inputs that accompany them.

use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use mist::penalty::compute_adaptive_weights;
use mist::solver::FitResult;
use mist::{CoefficientVector, DesignMatrix, Family, FidelityModel, PenaltySpec, Response, SolverConfig};
use nalgebra::DMatrix;

use crate::args::DataArgs;
use crate::CliError;

pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Table> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .with_context(|| format!("cannot open {}", path.display()))?;
        let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
        let mut rows = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| CliError::parse(format!("{}: {e}", path.display())))?;
            let row = record
                .iter()
                .enumerate()
                .map(|(k, field)| parse_number(field, &header[k], line + 2))
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(CliError::parse(format!("{} has no data rows", path.display())).into());
        }
        Ok(Table { header, rows })
    }

    fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::validation(format!("no column named '{name}'")).into())
    }

    fn values(&self, k: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[k]).collect()
    }
}

fn parse_number(field: &str, column: &str, line: usize) -> Result<f64> {
    match field.to_ascii_lowercase().as_str() {
        "true" => return Ok(1.0),
        "false" => return Ok(0.0),
        _ => {}
    }
    field
        .parse::<f64>()
        .map_err(|_| CliError::parse(format!("line {line}, column '{column}': '{field}' is not a number")).into())
}

pub struct Loaded {
    pub model: FidelityModel,
    /// Predictor column names in design order.
    pub names: Vec<String>,
}

/// Builds the model; every column not used by the response is a predictor.
pub fn load_model(args: &DataArgs) -> Result<Loaded> {
    let family: Family = args.family.parse()?;
    let table = Table::read(&args.data)?;
    let mut used = vec![table.column(&args.response_col)?];
    let y = table.values(used[0]);
    let response = match family {
        Family::Gaussian => Response::gaussian(y),
        Family::Logistic => Response::logistic(y),
        Family::Poisson => {
            let offsets = match &args.offset_col {
                Some(name) => {
                    let k = table.column(name)?;
                    used.push(k);
                    Some(table.values(k))
                }
                None => None,
            };
            Response::poisson(y, offsets)
        }
        Family::Cox => {
            let k = table.column(&args.status_col)?;
            used.push(k);
            let status = table
                .values(k)
                .into_iter()
                .map(|v| match v {
                    0.0 => Ok(false),
                    1.0 => Ok(true),
                    _ => Err(CliError::parse(format!("status must be 0 or 1, got {v}"))),
                })
                .collect::<std::result::Result<Vec<bool>, _>>()?;
            Response::cox(y, status)
        }
    };
    let predictors: Vec<usize> = (0..table.header.len()).filter(|k| !used.contains(k)).collect();
    if predictors.is_empty() {
        bail!(CliError::validation("no predictor columns".into()));
    }
    let x = DMatrix::from_fn(table.rows.len(), predictors.len(), |i, j| table.rows[i][predictors[j]]);
    let intercept = !args.no_intercept && family != Family::Cox;
    Ok(Loaded {
        model: FidelityModel::new(DesignMatrix::new(x, intercept)?, response)?,
        names: predictors.iter().map(|&k| table.header[k].clone()).collect(),
    })
}

/// Inline JSON when the argument looks like an object, else a file path.
fn json_text(arg: &str) -> Result<String> {
    if arg.trim_start().starts_with('{') || arg.trim_start().starts_with('[') {
        Ok(arg.to_owned())
    } else {
        fs::read_to_string(arg).with_context(|| format!("cannot read {arg}"))
    }
}

pub fn solver_config(arg: Option<&str>) -> Result<SolverConfig> {
    let config: SolverConfig = match arg {
        Some(a) => serde_json::from_str(&json_text(a)?).map_err(|e| CliError::parse(format!("solver JSON: {e}")))?,
        None => SolverConfig::default(),
    };
    config.validate()?;
    Ok(config)
}

/// Parses the penalty; adaptive families without weights get
/// `|β̂_MLE|^{−γ}` with `γ` from the JSON or `default_gamma`.
pub fn penalty(arg: &str, model: &FidelityModel, default_gamma: f64) -> Result<PenaltySpec> {
    let mut spec: PenaltySpec =
        serde_json::from_str(&json_text(arg)?).map_err(|e| CliError::parse(format!("penalty JSON: {e}")))?;
    if spec.family.is_adaptive() && spec.weights.is_none() {
        let gamma = spec.gamma.unwrap_or(default_gamma);
        let pilot = model.mle()?;
        spec.weights = Some(compute_adaptive_weights(pilot.beta.as_slice(), gamma)?);
    }
    Ok(spec)
}

/// A start file holds a fit result or a bare coefficient array in full
/// layout (intercept first when the model has one).
pub fn start_from_file(path: &Path, model: &FidelityModel) -> Result<CoefficientVector> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    if let Ok(fit) = FitResult::from_json(&text) {
        return Ok(fit.coef);
    }
    let full: Vec<f64> = serde_json::from_str(&text)
        .map_err(|_| anyhow!(CliError::parse(format!("{} is neither a fit result nor a number array", path.display()))))?;
    Ok(CoefficientVector::from_full(
        &nalgebra::DVector::from_vec(full),
        model.has_intercept(),
    ))
}
