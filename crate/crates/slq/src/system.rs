//! Plant model, sample-path simulation, exact second moments, mean-square
//! stability, and stochastic Lyapunov solves.
//!
//! The plant is
//!
//! ```text
//! x_{t+1} = A x_t + B u_t + (C x_t + D u_t) w_t
//! ```
//!
//! with scalar i.i.d. Gaussian noise w_t of mean zero and variance sigma2.
//! Under state feedback u = Kx the closed loop is x_{t+1} = (F + w_t G) x_t
//! with F = A + BK and G = C + DK, and the second moment M_t = E[x_t x_t']
//! evolves by the linear map
//!
//! ```text
//! M  ->  F M F' + sigma2 * G M G'.
//! ```
//!
//! Stability, policy evaluation, and cost computation all reduce to the
//! spectral radius and fixed points of that map, which is why every solver
//! in this crate funnels through the helpers here.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::Error;
use crate::matops::{unvec, vec_of};

/// Static state-feedback gain, m-by-n, applied as u = Kx.
pub type Gain = DMatrix<f64>;

/// Plant coefficients and the scalar noise variance.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    /// State matrix, n-by-n.
    pub a: DMatrix<f64>,
    /// Input matrix, n-by-m.
    pub b: DMatrix<f64>,
    /// State-noise matrix, n-by-n.
    pub c: DMatrix<f64>,
    /// Input-noise matrix, n-by-m.
    pub d: DMatrix<f64>,
    /// Variance of the scalar noise w_t, nonnegative.
    pub sigma2: f64,
}

impl SystemModel {
    /// Validates shapes (A, C square n-by-n; B, D n-by-m) and sigma2 >= 0.
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        sigma2: f64,
    ) -> Result<Self, Error> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::ShapeMismatch {
                context: format!("A must be square, got {}x{}", a.nrows(), a.ncols()),
            });
        }
        if c.shape() != (n, n) {
            return Err(Error::ShapeMismatch {
                context: format!("C must match A ({n}x{n}), got {}x{}", c.nrows(), c.ncols()),
            });
        }
        let m = b.ncols();
        if b.nrows() != n {
            return Err(Error::ShapeMismatch {
                context: format!("B must have {n} rows like A, got {}x{}", b.nrows(), b.ncols()),
            });
        }
        if d.shape() != (n, m) {
            return Err(Error::ShapeMismatch {
                context: format!("D must match B ({n}x{m}), got {}x{}", d.nrows(), d.ncols()),
            });
        }
        if !(sigma2 >= 0.0 && sigma2.is_finite()) {
            return Err(Error::ShapeMismatch {
                context: format!("sigma2 must be finite and nonnegative, got {sigma2}"),
            });
        }
        Ok(Self { a, b, c, d, sigma2 })
    }

    /// State dimension n.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Input dimension m.
    pub fn m(&self) -> usize {
        self.b.ncols()
    }
}

/// Quadratic stage-cost weights for x'Qx + 2u'Sx + u'Ru.
#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights {
    /// State weight, n-by-n symmetric.
    pub q: DMatrix<f64>,
    /// Cross weight, m-by-n.
    pub s: DMatrix<f64>,
    /// Input weight, m-by-m symmetric.
    pub r: DMatrix<f64>,
    /// True when R > 0 and Q - S'R^{-1}S > 0. Informational only: the
    /// solvers accept semidefinite and indefinite R as long as the
    /// policy-update curvature stays positive definite at every iterate.
    pub standard_case: bool,
}

/// Relative asymmetry used to validate symmetric inputs.
fn rel_asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).norm() / 1f64.max(m.norm())
}

impl CostWeights {
    /// Validates symmetry of Q and R (relative tolerance 1e-9) and the
    /// m-by-n shape of S, then records whether the strictly definite case
    /// holds.
    pub fn new(q: DMatrix<f64>, s: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self, Error> {
        let n = q.nrows();
        let m = r.nrows();
        if q.ncols() != n {
            return Err(Error::ShapeMismatch {
                context: format!("Q must be square, got {}x{}", q.nrows(), q.ncols()),
            });
        }
        if r.ncols() != m {
            return Err(Error::ShapeMismatch {
                context: format!("R must be square, got {}x{}", r.nrows(), r.ncols()),
            });
        }
        if s.shape() != (m, n) {
            return Err(Error::ShapeMismatch {
                context: format!("S must be {m}x{n} (inputs by states), got {}x{}", s.nrows(), s.ncols()),
            });
        }
        for mat in [&q, &r] {
            let asym = rel_asymmetry(mat);
            if asym > 1e-9 {
                return Err(Error::NotSymmetric { asymmetry: asym });
            }
        }
        let standard_case = match nalgebra::Cholesky::new(r.clone()) {
            Some(chol) => {
                let schur = &q - s.transpose() * chol.solve(&s);
                let sym = (&schur + schur.transpose()) / 2.0;
                sym.symmetric_eigenvalues().min() > 0.0
            }
            None => false,
        };
        Ok(Self { q, s, r, standard_case })
    }

    /// Checks that the weights conform to a model's state and input sizes.
    pub fn check_model(&self, model: &SystemModel) -> Result<(), Error> {
        if self.q.nrows() != model.n() || self.r.nrows() != model.m() {
            return Err(Error::ShapeMismatch {
                context: format!(
                    "cost weights sized for n={}, m={} but model has n={}, m={}",
                    self.q.nrows(),
                    self.r.nrows(),
                    model.n(),
                    model.m()
                ),
            });
        }
        Ok(())
    }

    /// Closed-loop stage-cost matrix Phi(K) = Q + K'S + S'K + K'RK, so that
    /// x'Qx + 2u'Sx + u'Ru = x'Phi x under u = Kx.
    pub fn integrand(&self, k: &Gain) -> DMatrix<f64> {
        let ks = k.transpose() * &self.s;
        &self.q + &ks + ks.transpose() + k.transpose() * &self.r * k
    }
}

/// Closed-loop pair F = A + BK, G = C + DK.
pub fn closed_loop(model: &SystemModel, k: &Gain) -> Result<(DMatrix<f64>, DMatrix<f64>), Error> {
    if k.shape() != (model.m(), model.n()) {
        return Err(Error::ShapeMismatch {
            context: format!(
                "gain must be {}x{} (inputs by states), got {}x{}",
                model.m(),
                model.n(),
                k.nrows(),
                k.ncols()
            ),
        });
    }
    Ok((&model.a + &model.b * k, &model.c + &model.d * k))
}

/// Matrix of the second-moment map: vec(M) -> (F(x)F + sigma2 G(x)G) vec(M).
fn second_moment_map(f: &DMatrix<f64>, g: &DMatrix<f64>, sigma2: f64) -> DMatrix<f64> {
    f.kronecker(f) + g.kronecker(g) * sigma2
}

/// Spectral radius of the second-moment map of the pair (F, G).
///
/// The pair is mean-square stable exactly when this radius is below one.
pub fn ms_spectral_radius(f: &DMatrix<f64>, g: &DMatrix<f64>, sigma2: f64) -> f64 {
    spectral_radius(&second_moment_map(f, g, sigma2))
}

/// Largest eigenvalue modulus of a square matrix.
///
/// The unbounded eigensolver can cycle forever on exactly structured inputs
/// such as the all-zero matrix (a deadbeat closed loop produces one), so the
/// Schur pass is iteration-capped. When it gives up, fall back to the norm
/// limit radius = lim ||T^k||^(1/k), evaluated by repeated squaring; sixty
/// squarings reach k = 2^60, far past where polynomial factors matter.
fn spectral_radius(t: &DMatrix<f64>) -> f64 {
    if let Some(schur) = t.clone().try_schur(f64::EPSILON, 10_000) {
        return schur
            .complex_eigenvalues()
            .iter()
            .map(|ev| ev.norm())
            .fold(0.0, f64::max);
    }
    let mut b = t.clone();
    let mut log_norm = 0.0;
    let mut power = 1.0;
    for _ in 0..60 {
        let scale = b.norm();
        if scale == 0.0 {
            return 0.0;
        }
        if !scale.is_finite() {
            return f64::INFINITY;
        }
        let unit = b / scale;
        b = &unit * &unit;
        log_norm = 2.0 * (log_norm + scale.ln());
        power *= 2.0;
    }
    ((log_norm + b.norm().ln()) / power).exp()
}

/// Mean-square stability test for the closed loop of (model, K).
///
/// Returns the verdict together with the spectral radius; the gain passes
/// when the radius is below 1 - tol, so a small positive tol rejects
/// marginally stable loops that only pass through rounding.
pub fn is_ms_stable(model: &SystemModel, k: &Gain, tol: f64) -> Result<(bool, f64), Error> {
    let (f, g) = closed_loop(model, k)?;
    let radius = ms_spectral_radius(&f, &g, model.sigma2);
    Ok((radius < 1.0 - tol, radius))
}

/// Default stability margin for accepting a gain.
pub const STABILITY_MARGIN: f64 = 1e-9;

/// Solves P = F'PF + sigma2 G'PG + M for the unique symmetric P.
///
/// The fixed point is computed from the linear system
/// (I - F'(x)F' - sigma2 G'(x)G') vec(P) = vec(M) and symmetrized. The
/// residual satisfies ||P - F'PF - sigma2 G'PG - M|| <= 1e-10 (1 + ||P||)
/// for any mean-square stable pair; for M > 0 the solution is positive
/// definite.
pub fn solve_stochastic_lyapunov(
    f: &DMatrix<f64>,
    g: &DMatrix<f64>,
    sigma2: f64,
    m: &DMatrix<f64>,
) -> Result<DMatrix<f64>, Error> {
    let n = f.nrows();
    if f.ncols() != n || g.shape() != (n, n) || m.shape() != (n, n) {
        return Err(Error::ShapeMismatch {
            context: format!(
                "Lyapunov solve needs square n-by-n F, G, M; got {}x{}, {}x{}, {}x{}",
                f.nrows(),
                f.ncols(),
                g.nrows(),
                g.ncols(),
                m.nrows(),
                m.ncols()
            ),
        });
    }
    let asym = rel_asymmetry(m);
    if asym > 1e-9 {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    let radius = ms_spectral_radius(f, g, sigma2);
    if radius >= 1.0 {
        return Err(Error::NotStable { radius });
    }
    let sym_m = (m + m.transpose()) / 2.0;
    // The moment map propagates vec(M); the value recursion uses its adjoint.
    let coeff = DMatrix::identity(n * n, n * n) - second_moment_map(f, g, sigma2).transpose();
    let solved = coeff
        .lu()
        .solve(&vec_of(&sym_m))
        .ok_or_else(|| Error::SingularSystem {
            context: format!("Lyapunov coefficient matrix singular at radius {radius:.6}"),
        })?;
    let p = unvec(&solved, n)?;
    Ok((&p + p.transpose()) / 2.0)
}

/// Deterministic substream derivation: hashes a base seed with a list of
/// tags (path, window, or iteration indices) so that every rollout gets an
/// independent generator regardless of evaluation order.
pub fn stream_seed(base: u64, tags: &[u64]) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    tags.iter().fold(splitmix(base), |acc, &t| splitmix(acc ^ splitmix(t)))
}

/// Monte Carlo sample paths of the closed loop on a time window.
#[derive(Debug, Clone)]
pub struct TrajectoryBatch {
    /// Window start s; states cover t = s through s + len + 1.
    pub start: usize,
    /// Window length l; every path holds exactly l + 2 states.
    pub len: usize,
    /// Base seed the per-path substreams were derived from.
    pub seed: u64,
    /// Sample paths, outer index is the path id.
    pub paths: Vec<Vec<DVector<f64>>>,
}

impl TrajectoryBatch {
    /// Largest state norm across all paths and times.
    pub fn max_norm(&self) -> f64 {
        self.paths
            .iter()
            .flat_map(|path| path.iter().map(|x| x.norm()))
            .fold(0.0, f64::max)
    }
}

/// Simulates L closed-loop sample paths from x0 over t = s..s+l+1.
///
/// Path k draws its noise from a generator seeded by stream_seed(seed, [k]),
/// so identical inputs reproduce identical bits and path evaluation order
/// does not matter.
pub fn simulate_paths(
    model: &SystemModel,
    k: &Gain,
    x0: &DVector<f64>,
    s: usize,
    l: usize,
    paths: usize,
    seed: u64,
) -> Result<TrajectoryBatch, Error> {
    let (f, g) = closed_loop(model, k)?;
    if x0.len() != model.n() {
        return Err(Error::ShapeMismatch {
            context: format!("initial state has length {}, model needs {}", x0.len(), model.n()),
        });
    }
    if paths == 0 {
        return Err(Error::ShapeMismatch {
            context: "at least one sample path is required".to_string(),
        });
    }
    let sigma = model.sigma2.sqrt();
    let mut all = Vec::with_capacity(paths);
    for path_id in 0..paths {
        let mut rng = ChaCha12Rng::seed_from_u64(stream_seed(seed, &[path_id as u64]));
        let mut states = Vec::with_capacity(l + 2);
        states.push(x0.clone());
        for _ in 0..=l {
            let x = states.last().expect("path starts nonempty");
            let w: f64 = sigma * rng.sample::<f64, _>(StandardNormal);
            states.push(&f * x + (&g * x) * w);
        }
        all.push(states);
    }
    Ok(TrajectoryBatch { start: s, len: l, seed, paths: all })
}

/// Exact second moments M_t = E[x_t x_t'] of the closed loop.
#[derive(Debug, Clone)]
pub struct MomentSequence {
    /// Window start s; moments cover t = s through s + l + 1.
    pub start: usize,
    /// M_t for consecutive t, each n-by-n symmetric PSD.
    pub moments: Vec<DMatrix<f64>>,
}

/// Propagates M_s = x0 x0' through M_{t+1} = F M_t F' + sigma2 G M_t G'.
///
/// For any weight Phi, E[x_t' Phi x_t] = trace(Phi M_t); this is the exact
/// counterpart of averaging over sample paths.
pub fn propagate_moments(
    model: &SystemModel,
    k: &Gain,
    x0: &DVector<f64>,
    s: usize,
    l: usize,
) -> Result<MomentSequence, Error> {
    let (f, g) = closed_loop(model, k)?;
    if x0.len() != model.n() {
        return Err(Error::ShapeMismatch {
            context: format!("initial state has length {}, model needs {}", x0.len(), model.n()),
        });
    }
    let mut moments = Vec::with_capacity(l + 2);
    moments.push(x0 * x0.transpose());
    for _ in 0..=l {
        let m = moments.last().expect("sequence starts nonempty");
        let next = &f * m * f.transpose() + (&g * m * g.transpose()) * model.sigma2;
        moments.push(next);
    }
    Ok(MomentSequence { start: s, moments })
}

/// Expected cost sum_{t=0}^{T} E[x_t' Phi(K) x_t] from exact moments.
///
/// For a mean-square stabilizing K this converges, as T grows, to x0'Px0
/// with P the stochastic Lyapunov solution for the integrand Phi(K).
pub fn evaluate_cost(
    model: &SystemModel,
    weights: &CostWeights,
    k: &Gain,
    x0: &DVector<f64>,
    horizon: usize,
) -> Result<f64, Error> {
    weights.check_model(model)?;
    let phi = weights.integrand(k);
    let seq = propagate_moments(model, k, x0, 0, horizon)?;
    Ok(seq.moments[..=horizon].iter().map(|m| phi.dot(m)).sum())
}
