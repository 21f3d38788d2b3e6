//! Policy iteration when A and B are unknown: ridge-regularized
//! least-squares identification of the dynamics, interleaved with
//! data-driven evaluation and estimate-based improvement.
//!
//! Each closed-loop sample (x_t, x_{t+1}) under u = Kx gives one equation
//! x_{t+1} = theta' Z_t + noise with the stacked regressor Z_t = [x_t; Kx_t]
//! and theta = [A; B] in the transposed convention theta'Z = Ax + Bu. The
//! estimate solves the regularized normal equations
//!
//! ```text
//! [ (1/L) sum ZZ' + ridge I ] theta = (1/L) sum Z target'
//! ```
//!
//! with ridge = 1/L, so the bias vanishes as the path budget grows.
//!
//! On-policy data from a single gain cannot identify A and B separately:
//! every Z_t lies in the n-dimensional graph subspace {[v; Kv]}, so the
//! unregularized Gram has rank at most n < n+m and the ridge solution is
//! the minimum-norm fit, which reproduces the closed loop A + BK but not
//! the pair (A, B). [`DynamicsEstimator`] therefore pools samples across
//! iterations; once two distinct gains have contributed, the Gram becomes
//! full rank and the estimate converges. [`run_with_estimation`] keeps the
//! previous estimate whenever the pooled Gram is still too close to
//! singular for the ridge level, instead of silently adopting a biased one.
//!
//! C, D, and sigma2 are treated as known throughout: only the drift pair
//! (A, B) is estimated, and the improvement step mixes the estimated drift
//! with the true noise channel.

use nalgebra::{DMatrix, DVector};

use crate::error::Error;
use crate::oracle::SolveOptions;
use crate::policy_iteration::{solve_value_regression, window_stats_from_batch, ExcitationPlan};
use crate::system::{
    is_ms_stable, ms_spectral_radius, simulate_paths, solve_stochastic_lyapunov, stream_seed,
    CostWeights, Gain, SystemModel, TrajectoryBatch, STABILITY_MARGIN,
};

/// Which regression target the estimator fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResidualForm {
    /// Target x_{t+1}; theta estimates [A; B] directly.
    Level,
    /// Target x_{t+1} - x_t; theta estimates [A - I; B] and
    /// [`DynamicsEstimate::a_hat`] adds the identity back.
    Difference,
}

/// Estimated drift parameters.
#[derive(Debug, Clone)]
pub struct DynamicsEstimate {
    /// (n+m)-by-n parameter matrix in the convention theta'Z = Ax + Bu
    /// (level form) or theta'Z = (A - I)x + Bu (difference form).
    pub theta: DMatrix<f64>,
    /// Interpretation of the top block of theta.
    pub form: ResidualForm,
    /// State dimension n.
    pub n: usize,
    /// Input dimension m.
    pub m: usize,
}

impl DynamicsEstimate {
    /// Wraps explicit (A, B) estimates.
    pub fn from_parts(a: &DMatrix<f64>, b: &DMatrix<f64>, form: ResidualForm) -> Result<Self, Error> {
        let n = a.nrows();
        if a.ncols() != n || b.nrows() != n {
            return Err(Error::ShapeMismatch {
                context: format!(
                    "estimate needs square A and conforming B, got {}x{} and {}x{}",
                    a.nrows(),
                    a.ncols(),
                    b.nrows(),
                    b.ncols()
                ),
            });
        }
        let m = b.ncols();
        let top = match form {
            ResidualForm::Level => a.clone(),
            ResidualForm::Difference => a - DMatrix::identity(n, n),
        };
        let mut theta = DMatrix::zeros(n + m, n);
        theta.rows_mut(0, n).copy_from(&top.transpose());
        theta.rows_mut(n, m).copy_from(&b.transpose());
        Ok(Self { theta, form, n, m })
    }

    /// The true parameters of a model, for initialization and testing.
    pub fn from_model(model: &SystemModel, form: ResidualForm) -> Self {
        Self::from_parts(&model.a, &model.b, form).expect("model shapes are validated")
    }

    /// Estimated state matrix A.
    pub fn a_hat(&self) -> DMatrix<f64> {
        let top = self.theta.rows(0, self.n).transpose();
        match self.form {
            ResidualForm::Level => top,
            ResidualForm::Difference => top + DMatrix::identity(self.n, self.n),
        }
    }

    /// Estimated input matrix B.
    pub fn b_hat(&self) -> DMatrix<f64> {
        self.theta.rows(self.n, self.m).transpose()
    }

    /// Distance to another estimate's (A, B) in the Frobenius norm,
    /// comparing recovered matrices so the forms may differ.
    pub fn param_distance(&self, other: &DynamicsEstimate) -> f64 {
        ((self.a_hat() - other.a_hat()).norm_squared()
            + (self.b_hat() - other.b_hat()).norm_squared())
        .sqrt()
    }
}

/// Spectrum summary of the pooled, unregularized Gram matrix.
#[derive(Debug, Clone, Copy)]
pub struct EstimatorDiagnostics {
    /// Smallest singular value of the pooled Gram.
    pub gram_min_sv: f64,
    /// Largest singular value of the pooled Gram.
    pub gram_max_sv: f64,
    /// Batches accumulated so far.
    pub batches: usize,
}

impl EstimatorDiagnostics {
    /// Whether the data determine all n+m regressor directions well enough
    /// to trust a ridge solve at the given level: the smallest Gram
    /// singular value must dominate the ridge and not be rank-deficiency
    /// noise relative to the largest.
    pub fn informative(&self, ridge: f64, snr: f64) -> bool {
        self.gram_min_sv >= snr * ridge && self.gram_min_sv >= 1e-12 * self.gram_max_sv
    }
}

/// Accumulates closed-loop samples for the drift regression, possibly
/// across several batches and gains.
#[derive(Debug, Clone)]
pub struct DynamicsEstimator {
    form: ResidualForm,
    gram: DMatrix<f64>,
    rhs: DMatrix<f64>,
    batches: usize,
    n: usize,
    m: usize,
}

impl DynamicsEstimator {
    /// Empty accumulator for an n-state, m-input plant.
    pub fn new(n: usize, m: usize, form: ResidualForm) -> Self {
        Self {
            form,
            gram: DMatrix::zeros(n + m, n + m),
            rhs: DMatrix::zeros(n + m, n),
            batches: 0,
            n,
            m,
        }
    }

    /// Pooled path-averaged Gram (1/L) sum ZZ' accumulated over batches.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// Pooled path-averaged right-hand side (1/L) sum Z target'.
    pub fn rhs(&self) -> &DMatrix<f64> {
        &self.rhs
    }

    /// Adds every transition of a batch generated under gain `k`,
    /// weighted by 1/L so batches of different path counts pool on the
    /// same scale.
    pub fn add_batch(&mut self, batch: &TrajectoryBatch, k: &Gain) -> Result<(), Error> {
        if batch.paths.is_empty() || batch.paths[0][0].len() != self.n {
            return Err(Error::ShapeMismatch {
                context: format!(
                    "batch states must have length {}, got {}",
                    self.n,
                    batch.paths.first().map_or(0, |p| p[0].len())
                ),
            });
        }
        if k.shape() != (self.m, self.n) {
            return Err(Error::ShapeMismatch {
                context: format!(
                    "gain must be {}x{}, got {}x{}",
                    self.m,
                    self.n,
                    k.nrows(),
                    k.ncols()
                ),
            });
        }
        let weight = 1.0 / batch.paths.len() as f64;
        let mut z = DVector::zeros(self.n + self.m);
        for path in &batch.paths {
            for t in 0..=batch.len {
                let x = &path[t];
                z.rows_mut(0, self.n).copy_from(x);
                z.rows_mut(self.n, self.m).copy_from(&(k * x));
                let target = match self.form {
                    ResidualForm::Level => path[t + 1].clone(),
                    ResidualForm::Difference => &path[t + 1] - x,
                };
                self.gram.ger(weight, &z, &z, 1.0);
                self.rhs.ger(weight, &z, &target, 1.0);
            }
        }
        self.batches += 1;
        Ok(())
    }

    /// Solves the regularized normal equations (Gram + ridge I) theta = rhs.
    pub fn estimate(&self, ridge: f64) -> Result<(DynamicsEstimate, EstimatorDiagnostics), Error> {
        let dim = self.n + self.m;
        let sv = self.gram.clone().svd(false, false).singular_values;
        let diag = EstimatorDiagnostics {
            gram_min_sv: sv.min(),
            gram_max_sv: sv.max(),
            batches: self.batches,
        };
        let coeff = &self.gram + DMatrix::identity(dim, dim) * ridge;
        let theta = coeff.lu().solve(&self.rhs).ok_or_else(|| Error::SingularSystem {
            context: "regularized Gram matrix is numerically singular".to_string(),
        })?;
        Ok((DynamicsEstimate { theta, form: self.form, n: self.n, m: self.m }, diag))
    }
}

/// One-shot drift estimate from a single batch, the regularized
/// least-squares update
///
/// ```text
/// theta = [ (1/L) sum ZZ' + (1/L) I ]^{-1} [ (1/L) sum Z target' ].
/// ```
///
/// Single-gain data leave the Gram rank deficient (see the module notes),
/// so the result reproduces A + BK but not (A, B); pool batches from
/// different gains in [`DynamicsEstimator`] when the pair itself matters.
pub fn update_theta(
    batch: &TrajectoryBatch,
    k: &Gain,
    form: ResidualForm,
) -> Result<(DynamicsEstimate, EstimatorDiagnostics), Error> {
    let n = batch.paths.first().map_or(0, |p| p[0].len());
    let mut estimator = DynamicsEstimator::new(n, k.nrows(), form);
    estimator.add_batch(batch, k)?;
    estimator.estimate(1.0 / batch.paths.len() as f64)
}

/// Policy evaluation with the estimated drift: solves the stochastic
/// Lyapunov equation with F = A_hat + B_hat K and the true noise pair
/// G = C + DK.
pub fn estimated_policy_evaluation(
    est: &DynamicsEstimate,
    model: &SystemModel,
    weights: &CostWeights,
    k: &Gain,
) -> Result<DMatrix<f64>, Error> {
    weights.check_model(model)?;
    let f = est.a_hat() + est.b_hat() * k;
    let g = &model.c + &model.d * k;
    solve_stochastic_lyapunov(&f, &g, model.sigma2, &weights.integrand(k))
}

/// Policy improvement with the estimated drift:
///
/// ```text
/// K = -(R + B_hat'P B_hat + sigma2 D'PD)^{-1}(B_hat'P A_hat + sigma2 D'PC + S).
/// ```
pub fn estimated_policy_improvement(
    est: &DynamicsEstimate,
    model: &SystemModel,
    weights: &CostWeights,
    p: &DMatrix<f64>,
) -> Result<Gain, Error> {
    weights.check_model(model)?;
    let b = est.b_hat();
    let h = &weights.r + b.transpose() * p * &b + (model.d.transpose() * p * &model.d) * model.sigma2;
    let h = (&h + h.transpose()) / 2.0;
    let chol = nalgebra::Cholesky::new(h.clone()).ok_or_else(|| Error::QuasiRNotPd {
        min_eig: h.symmetric_eigenvalues().min(),
    })?;
    let rhs = b.transpose() * p * est.a_hat()
        + (model.d.transpose() * p * &model.c) * model.sigma2
        + &weights.s;
    Ok(-chol.solve(&rhs))
}

/// Settings of an estimation run beyond the shared stopping rule.
#[derive(Debug, Clone, Copy)]
pub struct EstimationOptions {
    /// Stopping rule on the value matrices.
    pub solve: SolveOptions,
    /// The pooled Gram must clear snr * ridge in its smallest singular
    /// value before a new estimate replaces the previous one.
    pub gram_snr: f64,
    /// State-norm bound; any rollout exceeding it aborts the run.
    pub divergence_bound: f64,
}

impl Default for EstimationOptions {
    fn default() -> Self {
        Self { solve: SolveOptions::default(), gram_snr: 10.0, divergence_bound: 1e9 }
    }
}

/// One accepted iteration of an estimation run.
#[derive(Debug, Clone)]
pub struct EstimationIteration {
    /// Gain that generated this iteration's data.
    pub k: Gain,
    /// Value matrix fitted from the data.
    pub p: DMatrix<f64>,
    /// True-plant moment-map spectral radius of the gain.
    pub radius: f64,
    /// Condition number of the evaluation regression.
    pub condition: f64,
    /// ||P - P_prev||_F (previous P taken as 0 on the first iteration).
    pub dp_norm: f64,
    /// Relative gap between the data-driven P and the Lyapunov solve
    /// under the current estimate; None when the estimated closed loop is
    /// not mean-square stable.
    pub model_eval_gap: Option<f64>,
    /// Whether the pooled estimate was refreshed this iteration.
    pub theta_updated: bool,
}

/// Result of an estimation run.
#[derive(Debug, Clone)]
pub struct EstimationRun {
    /// Last fitted value matrix.
    pub p: DMatrix<f64>,
    /// Gain improved from that value matrix under the final estimate.
    pub k: Gain,
    /// Final drift estimate.
    pub estimate: DynamicsEstimate,
    /// Per-iteration trace.
    pub iterations: Vec<EstimationIteration>,
    /// Whether the stopping rule fired within the budget.
    pub converged: bool,
}

/// Policy iteration with unknown drift, from a stabilizing initial gain
/// and an initial estimate.
///
/// The plan's evaluation mode is ignored: identification always needs
/// sampled trajectories, so the windows are simulated unconditionally.
/// Per iteration: simulate the plan's windows under the current gain
/// (fresh substreams per iteration and window), fit P from the window
/// statistics, improve the gain with the current drift estimate, then
/// refresh the estimate from the pooled samples when the data are
/// informative enough. With sigma2 = 0 a single rollout per window
/// replaces the L identical copies; the ridge still uses the configured
/// path count, so a larger plan.paths tightens the estimate.
///
/// The true model is used only to simulate, to stability-check gains, and
/// for its known C, D, sigma2; the drift (A, B) reaches the learner
/// exclusively through the estimate.
pub fn run_with_estimation(
    model: &SystemModel,
    weights: &CostWeights,
    k0: &Gain,
    theta0: &DynamicsEstimate,
    plan: &ExcitationPlan,
    opts: &EstimationOptions,
) -> Result<EstimationRun, Error> {
    weights.check_model(model)?;
    if theta0.n != model.n() || theta0.m != model.m() {
        return Err(Error::ShapeMismatch {
            context: format!(
                "initial estimate sized for n={}, m={} but model has n={}, m={}",
                theta0.n,
                theta0.m,
                model.n(),
                model.m()
            ),
        });
    }
    let n = model.n();
    let ridge = 1.0 / plan.paths as f64;
    let effective_paths = if model.sigma2 == 0.0 { 1 } else { plan.paths };

    let mut estimator = DynamicsEstimator::new(n, model.m(), theta0.form);
    let mut estimate = theta0.clone();
    let mut k = k0.clone();
    let mut p_prev = DMatrix::zeros(n, n);
    let mut iterations: Vec<EstimationIteration> = Vec::new();

    for iter in 0..opts.solve.max_iters {
        let (stable, radius) = is_ms_stable(model, &k, STABILITY_MARGIN)?;
        if !stable {
            return Err(Error::NotStabilizing { radius });
        }
        let phi = weights.integrand(&k);

        let mut rows = DMatrix::zeros(plan.windows.len(), n * n);
        let mut targets = DVector::zeros(plan.windows.len());
        for (j, window) in plan.windows.iter().enumerate() {
            let batch = simulate_paths(
                model,
                &k,
                &window.xi,
                window.start,
                window.len,
                effective_paths,
                stream_seed(plan.seed, &[iter as u64 + 1, j as u64]),
            )?;
            let worst = batch.max_norm();
            if worst > opts.divergence_bound {
                return Err(Error::Diverged { t: window.len, norm: worst });
            }
            let stats = window_stats_from_batch(&phi, &batch);
            rows.row_mut(j).copy_from(&stats.row.transpose());
            targets[j] = stats.delta;
            estimator.add_batch(&batch, &k)?;
        }

        let (p, condition) = solve_value_regression(rows, targets)?;
        let dp_norm = (&p - &p_prev).norm();

        let model_eval_gap = {
            let f = estimate.a_hat() + estimate.b_hat() * &k;
            let g = &model.c + &model.d * &k;
            if ms_spectral_radius(&f, &g, model.sigma2) < 1.0 {
                solve_stochastic_lyapunov(&f, &g, model.sigma2, &phi)
                    .ok()
                    .map(|p_model| (&p_model - &p).norm() / 1f64.max(p.norm()))
            } else {
                None
            }
        };

        let k_next = estimated_policy_improvement(&estimate, model, weights, &p)?;

        let (candidate, diag) = estimator.estimate(ridge)?;
        let theta_updated = diag.informative(ridge, opts.gram_snr);
        if theta_updated {
            estimate = candidate;
        }

        iterations.push(EstimationIteration {
            k: k.clone(),
            p: p.clone(),
            radius,
            condition,
            dp_norm,
            model_eval_gap,
            theta_updated,
        });

        if dp_norm < opts.solve.tol {
            return Ok(EstimationRun { p, k: k_next, estimate, iterations, converged: true });
        }
        p_prev = p;
        k = k_next;
    }
    Err(Error::MaxItersExceeded { iters: opts.solve.max_iters })
}
