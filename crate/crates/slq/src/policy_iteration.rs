//! Data-driven policy iteration: policy evaluation by regression over
//! finite trajectory windows, policy improvement from the model.
//!
//! For a stabilizing gain K, the value matrix P(K) satisfies, on any
//! window [s, s+l+1] started at a deterministic state xi,
//!
//! ```text
//! xi'P xi - E[x_{s+l+1}' P x_{s+l+1}] = E[ sum_{t=s}^{s+l} x_t' Phi(K) x_t ]
//! ```
//!
//! with Phi(K) = Q + K'S + S'K + K'RK. The left side is linear in the
//! packed vector vec_plus(P): with row
//!
//! ```text
//! row_j = (xi_j (x) xi_j)' - E[x (x) x at s_j+l_j+1]'
//! ```
//!
//! each window contributes one equation row_j W vec_plus(P) = delta_j,
//! where W is the duplication matrix. Stacking at least N = n(n+1)/2
//! well-chosen windows determines P without touching A or B in the
//! evaluation step. Expectations come either from exact moment propagation
//! or from Monte Carlo sample means over L paths; improvement then reuses
//! the model formula.

use nalgebra::{DMatrix, DVector};

use crate::error::Error;
use crate::matops::{duplication, half_len, inv_vec_plus, vec_of};
use crate::oracle::{improve_gain, SolveOptions};
use crate::system::{
    is_ms_stable, propagate_moments, simulate_paths, stream_seed, CostWeights, Gain, SystemModel,
    TrajectoryBatch, STABILITY_MARGIN,
};

/// How window expectations are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    /// Exact second-moment propagation; reproduces expectations to
    /// machine precision.
    Exact,
    /// Sample means over the plan's `paths` rollouts per window.
    MonteCarlo,
}

/// One excitation window: a deterministic restart state and a time span.
#[derive(Debug, Clone)]
pub struct Window {
    /// Restart state xi.
    pub xi: DVector<f64>,
    /// Window start s.
    pub start: usize,
    /// Window length l; states run through s + l + 1.
    pub len: usize,
}

/// Excitation windows plus the evaluation mode and sampling parameters.
#[derive(Debug, Clone)]
pub struct ExcitationPlan {
    /// At least n(n+1)/2 windows; more are allowed and solved by least
    /// squares.
    pub windows: Vec<Window>,
    /// Exact moments or Monte Carlo sample means.
    pub mode: EvalMode,
    /// Sample paths per window in Monte Carlo mode.
    pub paths: usize,
    /// Base RNG seed; per-window and per-path substreams are derived.
    pub seed: u64,
}

impl ExcitationPlan {
    /// Exact-moment plan with the default windows for dimension n:
    /// start 0, length 200, and n(n+1)/2 restart states.
    ///
    /// For n = 2 the restarts are the benchmark probe states [3,7], [2,18],
    /// [14,3]; otherwise scaled basis vectors e_i and sums e_i + e_j, which
    /// make the stacked regression full rank for generic systems.
    pub fn default_for(n: usize) -> Self {
        let xis: Vec<DVector<f64>> = if n == 2 {
            vec![
                DVector::from_column_slice(&[3.0, 7.0]),
                DVector::from_column_slice(&[2.0, 18.0]),
                DVector::from_column_slice(&[14.0, 3.0]),
            ]
        } else {
            let mut xis = Vec::with_capacity(half_len(n));
            for i in 0..n {
                let mut e = DVector::zeros(n);
                e[i] = 2.0;
                xis.push(e);
            }
            for i in 0..n {
                for j in (i + 1)..n {
                    let mut e = DVector::zeros(n);
                    e[i] = 1.0;
                    e[j] = 1.0;
                    xis.push(e);
                }
            }
            xis
        };
        let windows = xis
            .into_iter()
            .map(|xi| Window { xi, start: 0, len: 200 })
            .collect();
        Self { windows, mode: EvalMode::Exact, paths: 1, seed: 0 }
    }

    /// Copy of the plan with a different base seed; used to give every
    /// iteration of a run fresh Monte Carlo draws.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut plan = self.clone();
        plan.seed = seed;
        plan
    }
}

/// Regression row and cost target of one window: everything policy
/// evaluation needs from the data.
#[derive(Debug, Clone)]
pub struct WindowStats {
    /// (xi (x) xi)' - E[x (x) x at the step after the window]'.
    pub row: DVector<f64>,
    /// Expected accumulated stage cost over the window.
    pub delta: f64,
}

/// Window statistics from exact moment propagation.
pub(crate) fn window_stats_exact(
    model: &SystemModel,
    phi: &DMatrix<f64>,
    k: &Gain,
    window: &Window,
) -> Result<WindowStats, Error> {
    let seq = propagate_moments(model, k, &window.xi, window.start, window.len)?;
    let delta = seq.moments[..=window.len].iter().map(|m| phi.dot(m)).sum();
    let terminal = vec_of(&seq.moments[window.len + 1]);
    let row = vec_of(&(&window.xi * window.xi.transpose())) - terminal;
    Ok(WindowStats { row, delta })
}

/// Window statistics as sample means over an already-simulated batch.
pub(crate) fn window_stats_from_batch(phi: &DMatrix<f64>, batch: &TrajectoryBatch) -> WindowStats {
    let paths = batch.paths.len() as f64;
    let n = batch.paths[0][0].len();
    let mut delta = 0.0;
    let mut terminal = DVector::zeros(n * n);
    for path in &batch.paths {
        for x in &path[..=batch.len] {
            delta += (x.transpose() * phi * x)[(0, 0)];
        }
        let last = &path[batch.len + 1];
        terminal += last.kronecker(last);
    }
    let xi = &batch.paths[0][0];
    WindowStats { row: xi.kronecker(xi) - terminal / paths, delta: delta / paths }
}

fn window_stats(
    model: &SystemModel,
    phi: &DMatrix<f64>,
    k: &Gain,
    window: &Window,
    mode: EvalMode,
    paths: usize,
    seed: u64,
) -> Result<WindowStats, Error> {
    match mode {
        EvalMode::Exact => window_stats_exact(model, phi, k, window),
        EvalMode::MonteCarlo => {
            let batch =
                simulate_paths(model, k, &window.xi, window.start, window.len, paths, seed)?;
            Ok(window_stats_from_batch(phi, &batch))
        }
    }
}

/// Expected accumulated stage cost E[sum x_t' Phi(K) x_t] over one window.
pub fn window_cost(
    model: &SystemModel,
    weights: &CostWeights,
    k: &Gain,
    window: &Window,
    mode: EvalMode,
    paths: usize,
    seed: u64,
) -> Result<f64, Error> {
    weights.check_model(model)?;
    Ok(window_stats(model, &weights.integrand(k), k, window, mode, paths, seed)?.delta)
}

/// Regression row (xi (x) xi)' - E[x (x) x at s+l+1]' of one window.
pub fn window_row(
    model: &SystemModel,
    k: &Gain,
    window: &Window,
    mode: EvalMode,
    paths: usize,
    seed: u64,
) -> Result<DVector<f64>, Error> {
    let phi = DMatrix::zeros(model.n(), model.n());
    Ok(window_stats(model, &phi, k, window, mode, paths, seed)?.row)
}

/// Solve diagnostics of one policy evaluation.
#[derive(Debug, Clone, Copy)]
pub struct EvalDiagnostics {
    /// Condition number of the stacked coefficient matrix XW.
    pub condition: f64,
    /// True when the condition number exceeds the warning threshold 1e8;
    /// the solution is still returned.
    pub ill_conditioned: bool,
    /// Number of stacked window equations.
    pub rows: usize,
}

/// Condition threshold above which evaluations are flagged.
pub const CONDITION_WARNING: f64 = 1e8;

/// Data-driven policy evaluation: fits P(K) from window statistics.
///
/// Stacks one equation per window into (XW) vec_plus(P) = J, solves by
/// least squares (exactly determined when the plan has N windows), and
/// rebuilds the symmetric P. Requires K to be mean-square stabilizing and
/// the stacked matrix to have full column rank N.
pub fn evaluate_policy(
    model: &SystemModel,
    weights: &CostWeights,
    k: &Gain,
    plan: &ExcitationPlan,
) -> Result<(DMatrix<f64>, EvalDiagnostics), Error> {
    weights.check_model(model)?;
    let (stable, radius) = is_ms_stable(model, k, STABILITY_MARGIN)?;
    if !stable {
        return Err(Error::NotStabilizing { radius });
    }
    let n = model.n();
    let unknowns = half_len(n);
    if plan.windows.len() < unknowns {
        return Err(Error::RankDeficient { rank: plan.windows.len(), needed: unknowns });
    }
    let phi = weights.integrand(k);

    let mut rows = DMatrix::zeros(plan.windows.len(), n * n);
    let mut targets = DVector::zeros(plan.windows.len());
    for (j, window) in plan.windows.iter().enumerate() {
        let stats = window_stats(
            model,
            &phi,
            k,
            window,
            plan.mode,
            plan.paths,
            stream_seed(plan.seed, &[j as u64]),
        )?;
        rows.row_mut(j).copy_from(&stats.row.transpose());
        targets[j] = stats.delta;
    }

    let (p, condition) = solve_value_regression(rows, targets)?;
    let diag = EvalDiagnostics {
        condition,
        ill_conditioned: condition > CONDITION_WARNING,
        rows: plan.windows.len(),
    };
    Ok((p, diag))
}

/// Least-squares solve of (XW) vec_plus(P) = J and symmetric rebuild.
///
/// Shared by the known-model and estimated-model evaluation paths. Returns
/// the fitted P with the condition number of XW.
pub(crate) fn solve_value_regression(
    rows: DMatrix<f64>,
    targets: DVector<f64>,
) -> Result<(DMatrix<f64>, f64), Error> {
    let n = (rows.ncols() as f64).sqrt().round() as usize;
    let unknowns = half_len(n);
    let coeff = rows * duplication(n);
    let svd = coeff.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let rank = svd.singular_values.iter().filter(|&&sv| sv > smax * 1e-12).count();
    if rank < unknowns {
        return Err(Error::RankDeficient { rank, needed: unknowns });
    }
    let packed = svd.solve(&targets, 0.0).map_err(|msg| Error::SingularSystem {
        context: format!("evaluation least squares failed: {msg}"),
    })?;
    let p = inv_vec_plus(&packed.column(0).into_owned())?;
    Ok(((&p + p.transpose()) / 2.0, smax / smin))
}

/// One accepted data-driven iteration.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    /// Gain that was evaluated.
    pub k: Gain,
    /// Fitted value matrix of that gain.
    pub p: DMatrix<f64>,
    /// Moment-map spectral radius of the evaluated closed loop.
    pub radius: f64,
    /// Condition number of the evaluation regression.
    pub condition: f64,
    /// ||P - P_prev||_F (previous P taken as 0 on the first iteration).
    pub dp_norm: f64,
}

/// Full trace of a data-driven run.
#[derive(Debug, Clone)]
pub struct RunRecord {
    /// Accepted iterations in order.
    pub iterations: Vec<IterationRecord>,
    /// Whether the stopping rule fired within the budget.
    pub converged: bool,
}

/// Final result of a data-driven run.
#[derive(Debug, Clone)]
pub struct DataDrivenRun {
    /// Last fitted value matrix.
    pub p: DMatrix<f64>,
    /// Gain improved from that value matrix.
    pub k: Gain,
    /// Per-iteration trace.
    pub record: RunRecord,
}

/// Data-driven policy iteration from a stabilizing initial gain.
///
/// Alternates [`evaluate_policy`] and the model-based gain update until
/// ||P_next - P_prev||_F < tol. Every gain, including updated ones, is
/// stability-checked before being evaluated; in Monte Carlo mode a failed
/// check aborts the run (sampling noise can produce destabilizing
/// updates), reported as [`Error::NotStabilizing`]. Iteration i draws its
/// window expectations from substreams of stream_seed(plan.seed, [i+1]) so
/// that successive iterations never reuse noise.
pub fn run_data_driven(
    model: &SystemModel,
    weights: &CostWeights,
    k0: &Gain,
    plan: &ExcitationPlan,
    opts: &SolveOptions,
) -> Result<DataDrivenRun, Error> {
    weights.check_model(model)?;
    let n = model.n();
    let mut k = k0.clone();
    let mut p_prev = DMatrix::zeros(n, n);
    let mut iterations = Vec::new();

    for iter in 0..opts.max_iters {
        let iter_plan = plan.with_seed(stream_seed(plan.seed, &[iter as u64 + 1]));
        let (p, diag) = evaluate_policy(model, weights, &k, &iter_plan)?;
        let radius = is_ms_stable(model, &k, STABILITY_MARGIN)?.1;
        let dp_norm = (&p - &p_prev).norm();
        iterations.push(IterationRecord {
            k: k.clone(),
            p: p.clone(),
            radius,
            condition: diag.condition,
            dp_norm,
        });

        let k_next = improve_gain(model, weights, &p)?;
        if dp_norm < opts.tol {
            return Ok(DataDrivenRun {
                p,
                k: k_next,
                record: RunRecord { iterations, converged: true },
            });
        }
        p_prev = p;
        k = k_next;
    }
    Err(Error::MaxItersExceeded { iters: opts.max_iters })
}
