//! Model-based ground truth: policy iteration through stochastic Lyapunov
//! solves, the gain-update formula, and the Riccati residual.
//!
//! For a stabilizing gain K the value matrix P(K) solves
//!
//! ```text
//! P = F'PF + sigma2 G'PG + Phi(K),    F = A + BK, G = C + DK,
//! ```
//!
//! and the minimizing gain for a fixed P is
//!
//! ```text
//! K = -(R + B'PB + sigma2 D'PD)^{-1} (B'PA + sigma2 D'PC + S).
//! ```
//!
//! Alternating the two converges monotonically to the stabilizing solution
//! of the stochastic algebraic Riccati equation (SARE) whenever the
//! curvature term R + B'PB + sigma2 D'PD stays positive definite. That
//! holds for positive definite R, and the iteration is also run, checked
//! at every step, for the semidefinite and indefinite R variants.

use nalgebra::DMatrix;

use crate::error::Error;
use crate::system::{
    closed_loop, is_ms_stable, solve_stochastic_lyapunov, CostWeights, Gain, SystemModel,
    STABILITY_MARGIN,
};

/// Stopping rule shared by the iterative solvers: quit when the Frobenius
/// norm of consecutive value-matrix differences drops below `tol`, fail
/// with [`Error::MaxItersExceeded`] after `max_iters` steps.
#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    /// Threshold on ||P_next - P_prev||_F.
    pub tol: f64,
    /// Iteration budget.
    pub max_iters: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iters: 500 }
    }
}

/// One accepted policy-iteration step.
#[derive(Debug, Clone)]
pub struct IterationStat {
    /// Gain that was evaluated.
    pub k: Gain,
    /// Value matrix of that gain.
    pub p: DMatrix<f64>,
    /// Moment-map spectral radius of the evaluated closed loop.
    pub radius: f64,
    /// ||P - P_prev||_F against the previous step (previous P taken as 0
    /// on the first step).
    pub dp_norm: f64,
}

/// Convergence trace of a policy-iteration run.
#[derive(Debug, Clone)]
pub struct SolveReport {
    /// Accepted steps in order.
    pub history: Vec<IterationStat>,
    /// Whether the stopping rule fired within the budget.
    pub converged: bool,
}

impl SolveReport {
    /// Number of completed evaluation/improvement rounds.
    pub fn iterations(&self) -> usize {
        self.history.len()
    }
}

/// Curvature of the policy update, R + B'PB + sigma2 D'PD, symmetrized.
fn update_curvature(model: &SystemModel, weights: &CostWeights, p: &DMatrix<f64>) -> DMatrix<f64> {
    let h = &weights.r
        + model.b.transpose() * p * &model.b
        + (model.d.transpose() * p * &model.d) * model.sigma2;
    (&h + h.transpose()) / 2.0
}

/// Factors the curvature term, rejecting the indefinite case.
fn curvature_cholesky(
    model: &SystemModel,
    weights: &CostWeights,
    p: &DMatrix<f64>,
) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>, Error> {
    let h = update_curvature(model, weights, p);
    nalgebra::Cholesky::new(h.clone()).ok_or_else(|| Error::QuasiRNotPd {
        min_eig: h.symmetric_eigenvalues().min(),
    })
}

/// Minimizing gain K = -(R + B'PB + sigma2 D'PD)^{-1}(B'PA + sigma2 D'PC + S)
/// for a fixed value matrix P.
pub fn improve_gain(
    model: &SystemModel,
    weights: &CostWeights,
    p: &DMatrix<f64>,
) -> Result<Gain, Error> {
    weights.check_model(model)?;
    let chol = curvature_cholesky(model, weights, p)?;
    let rhs = model.b.transpose() * p * &model.a
        + (model.d.transpose() * p * &model.c) * model.sigma2
        + &weights.s;
    Ok(-chol.solve(&rhs))
}

/// Defect of the stochastic algebraic Riccati equation at P:
///
/// ```text
/// Q + A'PA + sigma2 C'PC - L'H^{-1}L - P,
/// L = B'PA + sigma2 D'PC + S,   H = R + B'PB + sigma2 D'PD.
/// ```
///
/// Zero exactly at the SARE solution; callers compare its Frobenius norm
/// against their tolerance.
pub fn sare_residual(
    model: &SystemModel,
    weights: &CostWeights,
    p: &DMatrix<f64>,
) -> Result<DMatrix<f64>, Error> {
    weights.check_model(model)?;
    let chol = curvature_cholesky(model, weights, p)?;
    let l = model.b.transpose() * p * &model.a
        + (model.d.transpose() * p * &model.c) * model.sigma2
        + &weights.s;
    let open = &weights.q
        + model.a.transpose() * p * &model.a
        + (model.c.transpose() * p * &model.c) * model.sigma2;
    Ok(open - l.transpose() * chol.solve(&l) - p)
}

/// Model-based policy iteration from a stabilizing initial gain.
///
/// Each round solves the stochastic Lyapunov equation for the current gain
/// with integrand Phi(K) = Q + K'S + S'K + K'RK, then recomputes the gain
/// from the fresh value matrix. Every accepted gain is stability-checked.
/// Under positive definite R the value matrices decrease monotonically to
/// the SARE solution; the returned report records the whole trace.
pub fn model_policy_iteration(
    model: &SystemModel,
    weights: &CostWeights,
    k0: &Gain,
    opts: &SolveOptions,
) -> Result<(DMatrix<f64>, Gain, SolveReport), Error> {
    weights.check_model(model)?;
    let n = model.n();
    let mut k = k0.clone();
    let mut p_prev = DMatrix::zeros(n, n);
    let mut history = Vec::new();

    for _ in 0..opts.max_iters {
        let (stable, radius) = is_ms_stable(model, &k, STABILITY_MARGIN)?;
        if !stable {
            return Err(Error::NotStabilizing { radius });
        }
        let (f, g) = closed_loop(model, &k)?;
        let p = solve_stochastic_lyapunov(&f, &g, model.sigma2, &weights.integrand(&k))?;
        let dp_norm = (&p - &p_prev).norm();
        history.push(IterationStat { k: k.clone(), p: p.clone(), radius, dp_norm });

        let k_next = improve_gain(model, weights, &p)?;
        if dp_norm < opts.tol {
            return Ok((p, k_next, SolveReport { history, converged: true }));
        }
        p_prev = p;
        k = k_next;
    }
    Err(Error::MaxItersExceeded { iters: opts.max_iters })
}
