//! Statistical reconstruction of the modulus field.
//!
//! The observation model `f = D(u^m) E + w̃` carries signal-dependent colored noise with
//! covariance `Γ = Σ_w + K(E) Σ_n K(E)ᵀ`. The solver alternates between refreshing `Γ` from
//! the current estimate (outer loop) and proximal-gradient steps on
//! `½‖f − D E‖²_{Γ⁻¹} + λ TV(E)` subject to `E ≥ floor` (inner loop).

mod fidelity;
mod gamma;
mod lipschitz;
mod prox;
mod solver;

pub use fidelity::{cost_g, grad_g, DataFidelity};
pub use gamma::{gamma_update, GammaOperator};
pub use lipschitz::{lipschitz_constant, lipschitz_step, LipschitzEstimate, STEP_SAFETY};
pub use prox::{prox_nonneg, Regularizer, TotalVariation};
pub use solver::{
    baseline_lsq, homogeneous_fit, reconstruct, InitialModulus, InnerRecord, InverseProblem,
    OuterRecord, ProxComposition, Reconstruction, SolverConfig, SolverTrace,
};

use thiserror::Error;

use crate::fem::FemError;
use crate::linalg::FactorError;

#[derive(Debug, Error)]
pub enum InverseError {
    #[error("covariance factorization failed: {0}")]
    Gamma(#[from] FactorError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("{what}: expected length {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite objective at outer iteration {outer}, inner iteration {inner}")]
    NonFinite { outer: usize, inner: usize },
    #[error("objective diverged at outer iteration {outer} (cost {cost:e} > {limit:e})")]
    Diverged {
        outer: usize,
        cost: f64,
        limit: f64,
        trace: Box<SolverTrace>,
    },
}
