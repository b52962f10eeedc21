//! Simultaneous mean-variance regression.
//!
//! Fits `y = x'β + s(x'γ)·e` by minimising the loss
//! `n⁻¹ Σ ½{(y_i − x_i'β)²/s(x_i'γ)² + 1}·s(x_i'γ)` over `(β, γ)`, with
//! sandwich inference, OLS/WLS baselines and a Monte Carlo harness.

pub mod error;
pub mod estimators;
pub mod inference;
pub mod linalg;
pub mod objective;
pub mod rng;
pub mod scale;
pub mod simulation;
pub mod solver;
pub mod types;

pub use error::{MvrError, Result};
pub use estimators::{fit_mvr, fit_ols, fit_wls, gls_oracle, sequential_oracle, WlsKind, WlsVariant};
pub use inference::{VcovRegime, SandwichVcov, WaldResult};
pub use rng::Rng;
pub use scale::{ScaleEval, ScaleFamily};
pub use solver::{SolverOptions, SolverReport, SolverStatus};
pub use types::{is_feasible, validate_dataset, Dataset, EstimatorTag, FitResult, ThetaEstimate};
