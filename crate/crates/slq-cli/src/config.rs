//! TOML experiment configuration: parsing and validation.
//!
//! Every error names the offending field by its TOML path (for example
//! `model.b` or `gain.k0`) so a bad config can be fixed without reading
//! source code. Dimension checks run here, before any solver is built,
//! and cross-reference the fields that set the expected sizes.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use slq::oracle::SolveOptions;
use slq::policy_iteration::{EvalMode, ExcitationPlan, Window};
use slq::system::{CostWeights, Gain, SystemModel};
use slq::sysid::{DynamicsEstimate, EstimationOptions, ResidualForm};
use toml::value::{Table, Value};

/// Why a configuration cannot be used.
#[derive(Debug)]
pub enum ConfigError {
    /// The file is not valid TOML.
    Parse(String),
    /// A required field is absent.
    MissingField(String),
    /// A field holds the wrong TOML type.
    WrongType { field: String, expected: &'static str },
    /// Matrix or vector fields disagree on dimensions.
    Dimension { field: String, detail: String },
    /// A field has the right type and shape but an unusable value.
    BadValue { field: String, detail: String },
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Parse(msg) => write!(f, "invalid TOML: {msg}"),
            ConfigError::MissingField(field) => write!(f, "missing required field {field}"),
            ConfigError::WrongType { field, expected } => {
                write!(f, "field {field} must be {expected}")
            }
            ConfigError::Dimension { field, detail } => {
                write!(f, "dimension mismatch in {field}: {detail}")
            }
            ConfigError::BadValue { field, detail } => write!(f, "bad value in {field}: {detail}"),
        }
    }
}

impl std::error::Error for ConfigError {}

/// Fully validated experiment description.
///
/// The solver options keep their library defaults for any field the file
/// leaves out, so a minimal config is just `[model]`, `[cost]`, and
/// `[gain]`.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub model: SystemModel,
    pub weights: CostWeights,
    pub k0: Gain,
    pub theta0: DynamicsEstimate,
    pub plan: ExcitationPlan,
    pub solve: SolveOptions,
    pub estimation: EstimationOptions,
    pub out_dir: Option<String>,
}

/// Parses and validates a TOML experiment config.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let root: Value = text.parse().map_err(|e: toml::de::Error| {
        ConfigError::Parse(e.message().to_string())
    })?;
    let root = root
        .as_table()
        .ok_or_else(|| ConfigError::Parse("top level must be a table".to_string()))?;

    let a = matrix(root, "model", "a")?;
    let n = a.nrows();
    if a.ncols() != n {
        return Err(ConfigError::Dimension {
            field: "model.a".to_string(),
            detail: format!("must be square, got {}x{}", a.nrows(), a.ncols()),
        });
    }
    let b = matrix(root, "model", "b")?;
    if b.nrows() != n {
        return Err(ConfigError::Dimension {
            field: "model.b".to_string(),
            detail: format!(
                "has {} rows but model.a is {n}x{n}, so model.b needs {n} rows",
                b.nrows()
            ),
        });
    }
    let m = b.ncols();
    let c = matrix(root, "model", "c")?;
    if c.shape() != (n, n) {
        return Err(ConfigError::Dimension {
            field: "model.c".to_string(),
            detail: format!(
                "must match model.a ({n}x{n}), got {}x{}",
                c.nrows(),
                c.ncols()
            ),
        });
    }
    let d = matrix(root, "model", "d")?;
    if d.shape() != (n, m) {
        return Err(ConfigError::Dimension {
            field: "model.d".to_string(),
            detail: format!(
                "must match model.b ({n}x{m}), got {}x{}",
                d.nrows(),
                d.ncols()
            ),
        });
    }
    let sigma2 = require_f64(root, "model", "sigma2")?;
    if !(sigma2 >= 0.0 && sigma2.is_finite()) {
        return Err(ConfigError::BadValue {
            field: "model.sigma2".to_string(),
            detail: format!("must be finite and nonnegative, got {sigma2}"),
        });
    }
    let model = SystemModel::new(a, b, c, d, sigma2)
        .map_err(|e| ConfigError::BadValue { field: "model".to_string(), detail: e.to_string() })?;

    let q = matrix(root, "cost", "q")?;
    check_shape(&q, (n, n), "cost.q", &format!("state weight must be {n}x{n} like model.a"))?;
    check_symmetric(&q, "cost.q")?;
    let s = matrix(root, "cost", "s")?;
    check_shape(
        &s,
        (m, n),
        "cost.s",
        &format!("cross weight must be {m}x{n} (inputs from model.b by states from model.a)"),
    )?;
    let r = matrix(root, "cost", "r")?;
    check_shape(&r, (m, m), "cost.r", &format!("input weight must be {m}x{m} like model.b columns"))?;
    check_symmetric(&r, "cost.r")?;
    let weights = CostWeights::new(q, s, r)
        .map_err(|e| ConfigError::BadValue { field: "cost".to_string(), detail: e.to_string() })?;

    let k0 = matrix(root, "gain", "k0")?;
    check_shape(
        &k0,
        (m, n),
        "gain.k0",
        &format!("feedback gain must be {m}x{n} to conform with model.b and model.a"),
    )?;

    let theta0 = read_estimator(root, n, m)?;
    let plan = read_plan(root, n)?;
    let solve = read_solver(root)?;
    let estimation = read_estimation_options(root, &solve)?;
    let out_dir = opt_str(root, "output", "dir")?;

    Ok(ExperimentConfig { model, weights, k0, theta0, plan, solve, estimation, out_dir })
}

/// Initial dynamics estimate; zeros in level form when the section is
/// absent.
fn read_estimator(root: &Table, n: usize, m: usize) -> Result<DynamicsEstimate, ConfigError> {
    let Some(sec) = section(root, "estimator") else {
        return DynamicsEstimate::from_parts(
            &DMatrix::zeros(n, n),
            &DMatrix::zeros(n, m),
            ResidualForm::Level,
        )
        .map_err(|e| ConfigError::BadValue { field: "estimator".to_string(), detail: e.to_string() });
    };
    let a0 = matrix_value(sec.get("a0"), "estimator.a0")?;
    check_shape(&a0, (n, n), "estimator.a0", &format!("must match model.a ({n}x{n})"))?;
    let b0 = matrix_value(sec.get("b0"), "estimator.b0")?;
    check_shape(&b0, (n, m), "estimator.b0", &format!("must match model.b ({n}x{m})"))?;
    let form = match opt_str_in(sec, "estimator", "form")?.as_deref() {
        None | Some("level") => ResidualForm::Level,
        Some("difference") => ResidualForm::Difference,
        Some(other) => {
            return Err(ConfigError::BadValue {
                field: "estimator.form".to_string(),
                detail: format!("must be \"level\" or \"difference\", got \"{other}\""),
            })
        }
    };
    DynamicsEstimate::from_parts(&a0, &b0, form)
        .map_err(|e| ConfigError::BadValue { field: "estimator".to_string(), detail: e.to_string() })
}

/// Excitation plan; library defaults fill anything the file leaves out,
/// including the whole window list.
fn read_plan(root: &Table, n: usize) -> Result<ExcitationPlan, ConfigError> {
    let mut plan = ExcitationPlan::default_for(n);
    let Some(sec) = section(root, "plan") else { return Ok(plan) };

    match opt_str_in(sec, "plan", "mode")?.as_deref() {
        None | Some("exact") => plan.mode = EvalMode::Exact,
        Some("mc") | Some("monte-carlo") => plan.mode = EvalMode::MonteCarlo,
        Some(other) => {
            return Err(ConfigError::BadValue {
                field: "plan.mode".to_string(),
                detail: format!("must be \"exact\" or \"mc\", got \"{other}\""),
            })
        }
    }
    if let Some(paths) = opt_usize_in(sec, "plan", "paths")? {
        if paths == 0 {
            return Err(ConfigError::BadValue {
                field: "plan.paths".to_string(),
                detail: "needs at least one sample path".to_string(),
            });
        }
        plan.paths = paths;
    }
    if let Some(seed) = opt_u64_in(sec, "plan", "seed")? {
        plan.seed = seed;
    }

    if let Some(value) = sec.get("window") {
        let list = value.as_array().ok_or(ConfigError::WrongType {
            field: "plan.window".to_string(),
            expected: "an array of window tables",
        })?;
        let mut windows = Vec::with_capacity(list.len());
        for (i, entry) in list.iter().enumerate() {
            let field = format!("plan.window[{i}]");
            let table = entry.as_table().ok_or(ConfigError::WrongType {
                field: field.clone(),
                expected: "a table with xi, start, len",
            })?;
            let xi = vector_value(table.get("xi"), &format!("{field}.xi"))?;
            if xi.len() != n {
                return Err(ConfigError::Dimension {
                    field: format!("{field}.xi"),
                    detail: format!("restart state has length {} but model.a is {n}x{n}", xi.len()),
                });
            }
            let start = opt_usize_in(table, &field, "start")?.unwrap_or(0);
            let len = opt_usize_in(table, &field, "len")?.ok_or_else(|| {
                ConfigError::MissingField(format!("{field}.len"))
            })?;
            if len == 0 {
                return Err(ConfigError::BadValue {
                    field: format!("{field}.len"),
                    detail: "window length must be positive".to_string(),
                });
            }
            windows.push(Window { xi, start, len });
        }
        if windows.is_empty() {
            return Err(ConfigError::BadValue {
                field: "plan.window".to_string(),
                detail: "at least one window is required when the list is given".to_string(),
            });
        }
        plan.windows = windows;
    }
    Ok(plan)
}

fn read_solver(root: &Table) -> Result<SolveOptions, ConfigError> {
    let mut solve = SolveOptions::default();
    let Some(sec) = section(root, "solver") else { return Ok(solve) };
    if let Some(tol) = opt_f64_in(sec, "solver", "tol")? {
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(ConfigError::BadValue {
                field: "solver.tol".to_string(),
                detail: format!("must be a positive number, got {tol}"),
            });
        }
        solve.tol = tol;
    }
    if let Some(max_iters) = opt_usize_in(sec, "solver", "max_iters")? {
        if max_iters == 0 {
            return Err(ConfigError::BadValue {
                field: "solver.max_iters".to_string(),
                detail: "needs at least one iteration".to_string(),
            });
        }
        solve.max_iters = max_iters;
    }
    Ok(solve)
}

fn read_estimation_options(
    root: &Table,
    solve: &SolveOptions,
) -> Result<EstimationOptions, ConfigError> {
    let mut opts = EstimationOptions { solve: *solve, ..EstimationOptions::default() };
    let Some(sec) = section(root, "estimator") else { return Ok(opts) };
    if let Some(snr) = opt_f64_in(sec, "estimator", "gram_snr")? {
        if !(snr > 0.0 && snr.is_finite()) {
            return Err(ConfigError::BadValue {
                field: "estimator.gram_snr".to_string(),
                detail: format!("must be a positive number, got {snr}"),
            });
        }
        opts.gram_snr = snr;
    }
    if let Some(bound) = opt_f64_in(sec, "estimator", "divergence_bound")? {
        if bound.is_nan() || bound <= 0.0 {
            return Err(ConfigError::BadValue {
                field: "estimator.divergence_bound".to_string(),
                detail: format!("must be a positive number, got {bound}"),
            });
        }
        opts.divergence_bound = bound;
    }
    Ok(opts)
}

fn section<'a>(root: &'a Table, name: &str) -> Option<&'a Table> {
    root.get(name).and_then(Value::as_table)
}

/// Required field lookup; a missing section reports the full field path.
fn require<'a>(root: &'a Table, sec: &str, key: &str) -> Result<&'a Value, ConfigError> {
    section(root, sec)
        .and_then(|s| s.get(key))
        .ok_or_else(|| ConfigError::MissingField(format!("{sec}.{key}")))
}

fn number(v: &Value) -> Option<f64> {
    match v {
        Value::Float(x) => Some(*x),
        Value::Integer(x) => Some(*x as f64),
        _ => None,
    }
}

fn require_f64(root: &Table, sec: &str, key: &str) -> Result<f64, ConfigError> {
    let v = require(root, sec, key)?;
    number(v).ok_or(ConfigError::WrongType {
        field: format!("{sec}.{key}"),
        expected: "a number",
    })
}

fn opt_f64_in(sec: &Table, sec_name: &str, key: &str) -> Result<Option<f64>, ConfigError> {
    match sec.get(key) {
        None => Ok(None),
        Some(v) => number(v).map(Some).ok_or(ConfigError::WrongType {
            field: format!("{sec_name}.{key}"),
            expected: "a number",
        }),
    }
}

fn opt_usize_in(sec: &Table, sec_name: &str, key: &str) -> Result<Option<usize>, ConfigError> {
    match sec.get(key) {
        None => Ok(None),
        Some(Value::Integer(x)) if *x >= 0 => Ok(Some(*x as usize)),
        Some(_) => Err(ConfigError::WrongType {
            field: format!("{sec_name}.{key}"),
            expected: "a nonnegative integer",
        }),
    }
}

fn opt_u64_in(sec: &Table, sec_name: &str, key: &str) -> Result<Option<u64>, ConfigError> {
    match sec.get(key) {
        None => Ok(None),
        Some(Value::Integer(x)) if *x >= 0 => Ok(Some(*x as u64)),
        Some(_) => Err(ConfigError::WrongType {
            field: format!("{sec_name}.{key}"),
            expected: "a nonnegative integer",
        }),
    }
}

fn opt_str_in(sec: &Table, sec_name: &str, key: &str) -> Result<Option<String>, ConfigError> {
    match sec.get(key) {
        None => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(_) => Err(ConfigError::WrongType {
            field: format!("{sec_name}.{key}"),
            expected: "a string",
        }),
    }
}

fn opt_str(root: &Table, sec: &str, key: &str) -> Result<Option<String>, ConfigError> {
    match section(root, sec) {
        None => Ok(None),
        Some(table) => opt_str_in(table, sec, key),
    }
}

/// Reads a required matrix field given as an array of equal-length numeric
/// rows.
fn matrix(root: &Table, sec: &str, key: &str) -> Result<DMatrix<f64>, ConfigError> {
    let v = require(root, sec, key)?;
    matrix_value(Some(v), &format!("{sec}.{key}"))
}

fn matrix_value(v: Option<&Value>, field: &str) -> Result<DMatrix<f64>, ConfigError> {
    let v = v.ok_or_else(|| ConfigError::MissingField(field.to_string()))?;
    let rows = v.as_array().ok_or(ConfigError::WrongType {
        field: field.to_string(),
        expected: "an array of numeric rows",
    })?;
    if rows.is_empty() {
        return Err(ConfigError::BadValue {
            field: field.to_string(),
            detail: "matrix needs at least one row".to_string(),
        });
    }
    let mut data: Vec<f64> = Vec::new();
    let mut ncols = 0usize;
    for (i, row) in rows.iter().enumerate() {
        let entries = row.as_array().ok_or(ConfigError::WrongType {
            field: format!("{field}[{i}]"),
            expected: "an array of numbers",
        })?;
        if i == 0 {
            ncols = entries.len();
            if ncols == 0 {
                return Err(ConfigError::BadValue {
                    field: field.to_string(),
                    detail: "matrix rows need at least one entry".to_string(),
                });
            }
        } else if entries.len() != ncols {
            return Err(ConfigError::Dimension {
                field: field.to_string(),
                detail: format!("row {i} has {} entries, row 0 has {ncols}", entries.len()),
            });
        }
        for (j, entry) in entries.iter().enumerate() {
            let x = number(entry).ok_or(ConfigError::WrongType {
                field: format!("{field}[{i}][{j}]"),
                expected: "a number",
            })?;
            if !x.is_finite() {
                return Err(ConfigError::BadValue {
                    field: format!("{field}[{i}][{j}]"),
                    detail: format!("entries must be finite, got {x}"),
                });
            }
            data.push(x);
        }
    }
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &data))
}

fn vector_value(v: Option<&Value>, field: &str) -> Result<DVector<f64>, ConfigError> {
    let v = v.ok_or_else(|| ConfigError::MissingField(field.to_string()))?;
    let entries = v.as_array().ok_or(ConfigError::WrongType {
        field: field.to_string(),
        expected: "an array of numbers",
    })?;
    if entries.is_empty() {
        return Err(ConfigError::BadValue {
            field: field.to_string(),
            detail: "vector needs at least one entry".to_string(),
        });
    }
    let mut data = Vec::with_capacity(entries.len());
    for (i, entry) in entries.iter().enumerate() {
        let x = number(entry).ok_or(ConfigError::WrongType {
            field: format!("{field}[{i}]"),
            expected: "a number",
        })?;
        data.push(x);
    }
    Ok(DVector::from_column_slice(&data))
}

fn check_shape(
    m: &DMatrix<f64>,
    expected: (usize, usize),
    field: &str,
    detail: &str,
) -> Result<(), ConfigError> {
    if m.shape() != expected {
        return Err(ConfigError::Dimension {
            field: field.to_string(),
            detail: format!("{detail}, got {}x{}", m.nrows(), m.ncols()),
        });
    }
    Ok(())
}

fn check_symmetric(m: &DMatrix<f64>, field: &str) -> Result<(), ConfigError> {
    let asym = (m - m.transpose()).norm() / 1f64.max(m.norm());
    if asym > 1e-9 {
        return Err(ConfigError::BadValue {
            field: field.to_string(),
            detail: format!("must be symmetric, relative asymmetry {asym:.3e}"),
        });
    }
    Ok(())
}
