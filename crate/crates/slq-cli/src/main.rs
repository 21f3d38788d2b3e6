//! Command-line driver for the stochastic LQ solvers.
//!
//! Subcommands cover the three solvers (model-based `oracle`, data-driven
//! `pi`, estimation-in-the-loop `sysid`), a trajectory dump (`simulate`),
//! and `reproduce`, which reruns a bundled benchmark with its cost-weight
//! variants. Exit codes: 0 success, 1 I/O failure, 2 unusable config or
//! flags, 3 numerical failure, 4 instability (a gain that does not
//! stabilize, or divergence along a sampled path).

mod config;
mod output;

use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use slq::oracle::{model_policy_iteration, sare_residual};
use slq::policy_iteration::{run_data_driven, EvalMode};
use slq::system::{is_ms_stable, simulate_paths, stream_seed, TrajectoryBatch};
use slq::sysid::run_with_estimation;

use config::{parse_config, ConfigError, ExperimentConfig};
use output::{write_iterates, write_trajectories, IterateRow, Report};

/// Spectral-radius margin shared with the library's stability checks.
const STABILITY_MARGIN: f64 = 1e-9;

#[derive(Parser)]
#[command(
    name = "slq",
    version,
    about = "Stochastic linear-quadratic control with multiplicative noise",
    long_about = "Solves infinite-horizon discrete-time LQ control for plants \
x_{t+1} = Ax_t + Bu_t + (Cx_t + Du_t)w_t, by model-based policy iteration or \
from trajectory data alone."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve from the model by policy iteration over Lyapunov equations
    Oracle(RunArgs),
    /// Data-driven policy iteration from trajectory-window regressions
    Pi(RunArgs),
    /// Data-driven policy iteration with dynamics estimation in the loop
    Sysid(RunArgs),
    /// Simulate the configured excitation windows and dump the paths
    Simulate(RunArgs),
    /// Rerun a bundled benchmark and its cost-weight variants
    Reproduce(ReproduceArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Path to a TOML experiment config
    #[arg(long)]
    config: PathBuf,
    /// Evaluation mode override: "exact" or "mc"
    #[arg(long)]
    mode: Option<String>,
    /// Sample paths per excitation window (Monte Carlo mode)
    #[arg(long)]
    paths: Option<usize>,
    /// Base RNG seed override
    #[arg(long)]
    seed: Option<u64>,
    /// Stopping tolerance override on ||P_next - P_prev||_F
    #[arg(long, allow_negative_numbers = true)]
    tol: Option<f64>,
    /// Iteration budget override
    #[arg(long)]
    max_iters: Option<usize>,
    /// Output directory (overrides the config; default "out")
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReproduceArgs {
    /// Bundled benchmark to rerun
    #[arg(value_parser = ["example1", "example2"])]
    name: String,
    /// Output directory root; one subdirectory per variant (default "out")
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Terminal failure carrying the process exit code.
struct Failure {
    code: i32,
    message: String,
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure { code: 2, message: e.to_string() }
    }
}

fn io_failure(context: &str, e: std::io::Error) -> Failure {
    Failure { code: 1, message: format!("{context}: {e}") }
}

fn solver_failure(e: slq::Error) -> Failure {
    use slq::Error as E;
    let code = match e {
        E::NotStable { .. } | E::NotStabilizing { .. } | E::Diverged { .. } => 4,
        _ => 3,
    };
    Failure { code, message: e.to_string() }
}

fn flag_failure(message: String) -> Failure {
    Failure { code: 2, message }
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Oracle(args) => cmd_oracle(&args),
        Command::Pi(args) => cmd_pi(&args),
        Command::Sysid(args) => cmd_sysid(&args),
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Reproduce(args) => cmd_reproduce(&args),
    };
    if let Err(f) = result {
        eprintln!("error: {}", f.message);
        std::process::exit(f.code);
    }
}

/// Reads the config file, applies flag overrides, and prepares the output
/// directory.
fn load(args: &RunArgs) -> Result<(ExperimentConfig, PathBuf), Failure> {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| io_failure(&format!("cannot read {}", args.config.display()), e))?;
    let mut cfg = parse_config(&text)?;
    apply_overrides(&mut cfg, args)?;
    let out_dir = args
        .out
        .clone()
        .or_else(|| cfg.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&out_dir)
        .map_err(|e| io_failure(&format!("cannot create {}", out_dir.display()), e))?;
    Ok((cfg, out_dir))
}

fn apply_overrides(cfg: &mut ExperimentConfig, args: &RunArgs) -> Result<(), Failure> {
    if let Some(mode) = &args.mode {
        cfg.plan.mode = match mode.as_str() {
            "exact" => EvalMode::Exact,
            "mc" | "monte-carlo" => EvalMode::MonteCarlo,
            other => {
                return Err(flag_failure(format!(
                    "--mode must be \"exact\" or \"mc\", got \"{other}\""
                )))
            }
        };
    }
    if let Some(paths) = args.paths {
        if paths == 0 {
            return Err(flag_failure("--paths needs at least one sample path".to_string()));
        }
        cfg.plan.paths = paths;
    }
    if let Some(seed) = args.seed {
        cfg.plan.seed = seed;
    }
    if let Some(tol) = args.tol {
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(flag_failure(format!("--tol must be positive, got {tol}")));
        }
        cfg.solve.tol = tol;
        cfg.estimation.solve.tol = tol;
    }
    if let Some(max_iters) = args.max_iters {
        if max_iters == 0 {
            return Err(flag_failure("--max-iters needs at least one iteration".to_string()));
        }
        cfg.solve.max_iters = max_iters;
        cfg.estimation.solve.max_iters = max_iters;
    }
    Ok(())
}

fn cmd_oracle(args: &RunArgs) -> Result<(), Failure> {
    let (cfg, out_dir) = load(args)?;
    let (p, k, solve) = model_policy_iteration(&cfg.model, &cfg.weights, &cfg.k0, &cfg.solve)
        .map_err(solver_failure)?;

    let rows: Vec<IterateRow> = solve
        .history
        .iter()
        .enumerate()
        .map(|(i, it)| IterateRow {
            iteration: i,
            p: it.p.clone(),
            k: it.k.clone(),
            dp_norm: it.dp_norm,
            radius: it.radius,
            condition: None,
        })
        .collect();
    write_iterates(&out_dir.join("iterates.csv"), &rows)
        .map_err(|e| io_failure("cannot write iterates.csv", e))?;

    let mut report = Report::new("oracle");
    describe_solution(&mut report, &cfg, &p, &k, solve.converged, solve.iterations())?;
    report
        .write(&out_dir.join("report.txt"))
        .map_err(|e| io_failure("cannot write report.txt", e))?;
    report.print_body();
    Ok(())
}

fn cmd_pi(args: &RunArgs) -> Result<(), Failure> {
    let (cfg, out_dir) = load(args)?;
    let run = run_data_driven(&cfg.model, &cfg.weights, &cfg.k0, &cfg.plan, &cfg.solve)
        .map_err(solver_failure)?;

    let rows: Vec<IterateRow> = run
        .record
        .iterations
        .iter()
        .enumerate()
        .map(|(i, it)| IterateRow {
            iteration: i,
            p: it.p.clone(),
            k: it.k.clone(),
            dp_norm: it.dp_norm,
            radius: it.radius,
            condition: Some(it.condition),
        })
        .collect();
    write_iterates(&out_dir.join("iterates.csv"), &rows)
        .map_err(|e| io_failure("cannot write iterates.csv", e))?;

    let mut report = Report::new("pi");
    describe_solution(
        &mut report,
        &cfg,
        &run.p,
        &run.k,
        run.record.converged,
        run.record.iterations.len(),
    )?;
    if let Some(last) = run.record.iterations.last() {
        report.line(format!("final evaluation condition number: {:.3e}", last.condition));
    }
    report
        .write(&out_dir.join("report.txt"))
        .map_err(|e| io_failure("cannot write report.txt", e))?;
    report.print_body();
    Ok(())
}

fn cmd_sysid(args: &RunArgs) -> Result<(), Failure> {
    let (cfg, out_dir) = load(args)?;
    let run = run_with_estimation(
        &cfg.model,
        &cfg.weights,
        &cfg.k0,
        &cfg.theta0,
        &cfg.plan,
        &cfg.estimation,
    )
    .map_err(solver_failure)?;

    let rows: Vec<IterateRow> = run
        .iterations
        .iter()
        .enumerate()
        .map(|(i, it)| IterateRow {
            iteration: i,
            p: it.p.clone(),
            k: it.k.clone(),
            dp_norm: it.dp_norm,
            radius: it.radius,
            condition: Some(it.condition),
        })
        .collect();
    write_iterates(&out_dir.join("iterates.csv"), &rows)
        .map_err(|e| io_failure("cannot write iterates.csv", e))?;

    let mut report = Report::new("sysid");
    describe_solution(&mut report, &cfg, &run.p, &run.k, run.converged, run.iterations.len())?;
    let refreshes = run.iterations.iter().filter(|it| it.theta_updated).count();
    report.line(format!("estimate refreshes: {refreshes}"));
    report.blank();
    report.matrix("A_hat", &run.estimate.a_hat());
    report.blank();
    report.matrix("B_hat", &run.estimate.b_hat());
    report
        .write(&out_dir.join("report.txt"))
        .map_err(|e| io_failure("cannot write report.txt", e))?;
    report.print_body();
    Ok(())
}

fn cmd_simulate(args: &RunArgs) -> Result<(), Failure> {
    let (cfg, out_dir) = load(args)?;
    let (_, radius) =
        is_ms_stable(&cfg.model, &cfg.k0, STABILITY_MARGIN).map_err(solver_failure)?;

    let mut batches: Vec<TrajectoryBatch> = Vec::with_capacity(cfg.plan.windows.len());
    for (j, window) in cfg.plan.windows.iter().enumerate() {
        let batch = simulate_paths(
            &cfg.model,
            &cfg.k0,
            &window.xi,
            window.start,
            window.len,
            cfg.plan.paths,
            stream_seed(cfg.plan.seed, &[j as u64]),
        )
        .map_err(solver_failure)?;
        batches.push(batch);
    }
    write_trajectories(&out_dir.join("trajectories.csv"), &batches, cfg.model.n())
        .map_err(|e| io_failure("cannot write trajectories.csv", e))?;

    let mut report = Report::new("simulate");
    report.line(format!("closed-loop ms radius under the configured gain: {radius:.6}"));
    report.line(format!(
        "windows: {}, paths per window: {}, seed: {}",
        cfg.plan.windows.len(),
        cfg.plan.paths,
        cfg.plan.seed
    ));
    for (j, batch) in batches.iter().enumerate() {
        let final_mean = batch.paths.iter().map(|p| p.last().unwrap().norm()).sum::<f64>()
            / batch.paths.len() as f64;
        report.line(format!(
            "window {j}: steps {}..{}, max state norm {:.4e}, mean final norm {:.4e}",
            batch.start,
            batch.start + batch.len + 1,
            batch.max_norm(),
            final_mean
        ));
    }
    report
        .write(&out_dir.join("report.txt"))
        .map_err(|e| io_failure("cannot write report.txt", e))?;
    report.print_body();
    Ok(())
}

/// A bundled benchmark variant: a name for the output subdirectory and the
/// embedded config text.
struct Variant {
    name: &'static str,
    config: &'static str,
}

const EXAMPLE1: &[Variant] = &[
    Variant { name: "standard", config: include_str!("../configs/example1.toml") },
    Variant { name: "r_zero", config: include_str!("../configs/example1_rzero.toml") },
    Variant { name: "r_indefinite", config: include_str!("../configs/example1_rneg.toml") },
];

const EXAMPLE2: &[Variant] = &[
    Variant { name: "standard", config: include_str!("../configs/example2.toml") },
    Variant { name: "r_semidefinite", config: include_str!("../configs/example2_rsemi.toml") },
];

fn cmd_reproduce(args: &ReproduceArgs) -> Result<(), Failure> {
    let variants = match args.name.as_str() {
        "example1" => EXAMPLE1,
        "example2" => EXAMPLE2,
        other => return Err(flag_failure(format!("unknown benchmark \"{other}\""))),
    };
    let root = args.out.clone().unwrap_or_else(|| PathBuf::from("out"));

    for variant in variants {
        let cfg = parse_config(variant.config)?;
        let dir = root.join(variant.name);
        fs::create_dir_all(&dir)
            .map_err(|e| io_failure(&format!("cannot create {}", dir.display()), e))?;

        let (p_star, k_star, _) =
            model_policy_iteration(&cfg.model, &cfg.weights, &cfg.k0, &cfg.solve)
                .map_err(solver_failure)?;
        let run = run_data_driven(&cfg.model, &cfg.weights, &cfg.k0, &cfg.plan, &cfg.solve)
            .map_err(solver_failure)?;
        let error = &run.p - &p_star;

        let rows: Vec<IterateRow> = run
            .record
            .iterations
            .iter()
            .enumerate()
            .map(|(i, it)| IterateRow {
                iteration: i,
                p: it.p.clone(),
                k: it.k.clone(),
                dp_norm: it.dp_norm,
                radius: it.radius,
                condition: Some(it.condition),
            })
            .collect();
        write_iterates(&dir.join("iterates.csv"), &rows)
            .map_err(|e| io_failure("cannot write iterates.csv", e))?;

        let mut report = Report::new("reproduce");
        report.line(format!("benchmark: {} / {}", args.name, variant.name));
        report.line(format!(
            "data-driven run: converged after {} iterations",
            run.record.iterations.len()
        ));
        report.blank();
        report.matrix("P* (model solve)", &p_star);
        report.blank();
        report.matrix("K* (model solve)", &k_star);
        report.blank();
        report.matrix("P (data-driven)", &run.p);
        report.blank();
        report.matrix("K (data-driven)", &run.k);
        report.blank();
        report.matrix("error P - P*", &error);
        report.line(format!("max entry |P - P*|: {:.3e}", error.abs().max()));
        report
            .write(&dir.join("report.txt"))
            .map_err(|e| io_failure("cannot write report.txt", e))?;

        println!("== {} / {} ==", args.name, variant.name);
        report.print_body();
        println!();
    }
    Ok(())
}

/// Shared report body: convergence status, final closed-loop radius, the
/// fixed-point defect of P under the true model, and the P and K blocks.
fn describe_solution(
    report: &mut Report,
    cfg: &ExperimentConfig,
    p: &DMatrix<f64>,
    k: &DMatrix<f64>,
    converged: bool,
    iterations: usize,
) -> Result<(), Failure> {
    let (_, radius) = is_ms_stable(&cfg.model, k, STABILITY_MARGIN).map_err(solver_failure)?;
    let residual = sare_residual(&cfg.model, &cfg.weights, p).map_err(solver_failure)?;
    report.line(format!("converged: {converged} after {iterations} iterations"));
    report.line(format!("final closed-loop ms radius: {radius:.6}"));
    report.line(format!("riccati residual norm: {:.3e}", residual.norm()));
    report.blank();
    report.matrix("P", p);
    report.blank();
    report.matrix("K", k);
    report.blank();
    Ok(())
}
