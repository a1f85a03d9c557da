//! Geometric complexity diagnostics for dense neural networks.
//!
//! The crate measures how much a model function varies over a dataset (the
//! mean squared Frobenius norm of the input-Jacobian) and relates that
//! quantity to the regularizers and training choices that control it:
//!
//! - [`linalg`]: dense matrix/vector arithmetic and spectral-norm estimation
//! - [`net`]: dense MLPs, initialization schemes, forward traces, exact
//!   reverse-mode parameter gradients and input-Jacobians
//! - [`loss`]: MSE and softmax cross-entropy with their signed residuals
//! - [`complexity`]: empirical geometric complexity, the exact piecewise-linear
//!   region form, spectral Lipschitz bounds, 1D Dirichlet energy and arc length
//! - [`regularize`]: L2, spectral, flatness and Jacobian penalties with
//!   parameter gradients
//! - [`igr`]: implicit-gradient-regularization decomposition, gradient
//!   alignment terms and the per-layer transfer inequality
//! - [`data`]: synthetic generators, IDX ingestion, label corruption, batching
//! - [`train`]: deterministic SGD with penalty composition and metric schedule
//! - [`experiments`]: named recipes with trend assertions
//! - [`checks`]: randomized identity/inequality suites and finite-difference
//!   oracles used by the `gcx check` command

pub mod checks;
pub mod complexity;
pub mod csvio;
pub mod data;
pub mod experiments;
pub mod igr;
pub mod linalg;
pub mod loss;
pub mod net;
pub mod regularize;
pub mod train;

pub use linalg::{Matrix, Vector};
pub use net::{Activation, GradientBundle, InitScheme, LayerSpec, Network};
