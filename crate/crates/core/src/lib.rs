//! Maximum Lq-likelihood estimation (MLqE) for exponential-family models.
//!
//! The estimator replaces the logarithm in the log-likelihood by the deformed
//! logarithm `Lq(u) = (u^(1-q) - 1) / (1 - q)`. For `q < 1` it trades a small,
//! controllable bias for a reduction in variance, which pays off for small
//! samples and for small tail probabilities.
//!
//! Crate layout:
//!
//! - [`lq`]: the deformed logarithm, the Lq-likelihood, the weighted score and
//!   the quasi-Newton solver.
//! - [`families`]: exponential distribution, multivariate normal and two GLMs.
//! - [`asymptotics`]: sandwich variances, closed forms and numeric routes.
//! - [`tail`]: plug-in tail probability/quantile inference and selection of `q`.
//! - [`resampling`]: nonparametric and parametric bootstrap for tail estimates.
//! - [`experiments`]: the Monte Carlo studies and their CSV output.
//!
//! ```
//! use mlqe_core::families::ExponentialModel;
//! use mlqe_core::lq::{solve_mlqe, DistortionParam, SolverOptions};
//!
//! let sample = vec![0.3, 1.2, 0.8, 2.5, 0.1, 0.9];
//! let q = DistortionParam::new(0.9).unwrap();
//! let fit = solve_mlqe(&sample, &ExponentialModel, q, &SolverOptions::default()).unwrap();
//! assert!(fit.converged);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod error;
pub mod experiments;
pub mod families;
pub mod linalg;
pub mod lq;
pub mod quad;
pub mod resampling;
pub mod tail;

pub use error::{LqError, Result};
pub use lq::{DistortionParam, FitResult, SolverOptions};

/// Parameter vectors are plain dense column vectors.
pub type Param = nalgebra::DVector<f64>;
