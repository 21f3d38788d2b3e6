//! Error type shared across the crate.

use thiserror::Error;

/// Failure modes of the solvers and of the linear-algebra helpers.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Two operands (or an operand and a model) disagree on dimensions.
    #[error("shape mismatch: {context}")]
    ShapeMismatch { context: String },

    /// A matrix required to be symmetric is not, beyond roundoff.
    #[error("matrix is not symmetric: relative asymmetry {asymmetry:.3e}")]
    NotSymmetric { asymmetry: f64 },

    /// A closed loop required to be mean-square stable has spectral
    /// radius at or above one.
    #[error("closed loop is not mean-square stable: moment-operator spectral radius {radius:.6}")]
    NotStable { radius: f64 },

    /// A gain that must stabilize the system (an initial or an updated
    /// policy) fails the mean-square stability test.
    #[error("gain does not stabilize the system: moment-operator spectral radius {radius:.6}")]
    NotStabilizing { radius: f64 },

    /// The linear system defining a fixed point is singular.
    #[error("singular linear system: {context}")]
    SingularSystem { context: String },

    /// The curvature matrix R + B'PB + sigma^2 D'PD of the policy update
    /// is not positive definite, so no minimizing gain exists.
    #[error("policy-update curvature R + B'PB + sigma^2 D'PD is not positive definite (min eigenvalue {min_eig:.3e})")]
    QuasiRNotPd { min_eig: f64 },

    /// The evaluation regression does not determine all free entries of P.
    #[error("regression matrix is rank deficient: rank {rank} of {needed} unknowns")]
    RankDeficient { rank: usize, needed: usize },

    /// An iteration budget ran out before the stopping rule fired.
    #[error("no convergence within {iters} iterations")]
    MaxItersExceeded { iters: usize },

    /// A simulated state left the trusted numeric range, which means the
    /// current policy is destabilizing in practice.
    #[error("trajectory diverged at step {t}: state norm {norm:.3e}")]
    Diverged { t: usize, norm: f64 },
}
