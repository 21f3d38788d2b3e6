//! Infinite-horizon discrete-time stochastic linear-quadratic control with
//! multiplicative noise.
//!
//! The plant is x_{t+1} = Ax_t + Bu_t + (Cx_t + Du_t)w_t with scalar
//! zero-mean Gaussian noise w_t of variance sigma2, and the goal is the
//! static feedback u = Kx minimizing the expected infinite-horizon
//! quadratic cost. Three solvers are provided:
//!
//! - [`oracle::model_policy_iteration`]: model-based policy iteration via
//!   stochastic Lyapunov solves, the ground truth the other two are
//!   measured against.
//! - [`policy_iteration::run_data_driven`]: policy evaluation by Kronecker
//!   regression over finite trajectory windows (exact moments or Monte
//!   Carlo sample means), policy improvement from the model.
//! - [`sysid::run_with_estimation`]: the same loop when A and B are
//!   unknown; a ridge-regularized least-squares estimate of the dynamics
//!   feeds the improvement step.

pub mod error;
pub mod matops;
pub mod oracle;
pub mod policy_iteration;
pub mod system;
pub mod sysid;

pub use error::Error;
