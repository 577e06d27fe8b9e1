use nalgebra::DMatrix;

use super::InverseError;
use crate::fem::PsiTensor;
use crate::linalg::{Cholesky, FactorError};
use crate::synth::NoiseModel;

/// Factored effective-noise covariance over the free DOFs.
#[derive(Clone, Debug)]
pub struct GammaOperator {
    chol: Cholesky,
    log_det: f64,
    /// Lower bound on the smallest eigenvalue, used by the conservative step-size fallback.
    eigen_floor: f64,
    jittered: bool,
}

impl GammaOperator {
    pub fn identity(dim: usize) -> Self {
        Self::from_dense(&DMatrix::identity(dim, dim), 1.0).expect("identity is positive definite")
    }

    /// Factors a symmetric positive definite matrix. `eigen_floor` must not exceed its
    /// smallest eigenvalue.
    pub fn from_dense(matrix: &DMatrix<f64>, eigen_floor: f64) -> Result<Self, FactorError> {
        let chol = Cholesky::factor(matrix)?;
        Ok(Self {
            log_det: chol.log_det(),
            chol,
            eigen_floor,
            jittered: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.chol.dim()
    }

    /// `Γ⁻¹ r`
    pub fn solve(&self, r: &[f64]) -> Vec<f64> {
        self.chol.solve(r)
    }

    /// `L⁻¹ r` with `Γ = L Lᵀ`, so that `rᵀ Γ⁻¹ r = ‖L⁻¹ r‖²`.
    pub fn whiten(&self, r: &[f64]) -> Vec<f64> {
        let mut v = r.to_vec();
        self.chol.solve_lower_in_place(&mut v);
        v
    }

    /// `L⁻ᵀ v` in place; composed with [`GammaOperator::whiten`] it yields `Γ⁻¹ r`.
    pub fn unwhiten_transpose_in_place(&self, v: &mut [f64]) {
        self.chol.solve_upper_in_place(v);
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn eigen_floor(&self) -> f64 {
        self.eigen_floor
    }

    /// Whether a diagonal shift was needed to factor.
    pub fn jittered(&self) -> bool {
        self.jittered
    }
}

/// Dense `Σ_w + K Σ_n Kᵀ` over the free DOFs.
pub(crate) fn gamma_dense(psi: &PsiTensor, modulus: &[f64], noise: &NoiseModel) -> Result<DMatrix<f64>, InverseError> {
    let k = psi.free_stiffness(modulus)?;
    let sigma_n = noise.displacement_variances(psi);
    let sigma_w = noise.force_variances(psi);
    let n = psi.free_dofs().len();
    let mut gamma = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(sigma_w));
    // K is symmetric, so row j of K is column j
    let mut entries: Vec<(usize, f64)> = Vec::new();
    for j in 0..n {
        let var = sigma_n[j];
        if var == 0.0 {
            continue;
        }
        entries.clear();
        entries.extend(k.row(j));
        for &(a, ka) in &entries {
            let scaled = var * ka;
            for &(b, kb) in &entries {
                gamma[(a, b)] += scaled * kb;
            }
        }
    }
    Ok(gamma)
}

/// Rebuilds and factors `Γ = Σ_w + K(E) Σ_n K(E)ᵀ` on the free DOFs.
///
/// On a failed factorization the diagonal is shifted by `1e-12 · tr(Γ) / n` and the
/// factorization retried once.
pub fn gamma_update(
    psi: &PsiTensor,
    modulus: &[f64],
    noise: &NoiseModel,
) -> Result<GammaOperator, InverseError> {
    if modulus.iter().any(|v| !v.is_finite()) {
        return Err(crate::fem::FemError::NonFinite("modulus field").into());
    }
    let mut gamma = gamma_dense(psi, modulus, noise)?;
    let floor = noise.sigma_f.powi(2);
    match GammaOperator::from_dense(&gamma, floor) {
        Ok(op) => Ok(op),
        Err(first) => {
            let n = gamma.nrows();
            let shift = 1e-12 * gamma.trace() / n as f64;
            if !(shift > 0.0) {
                return Err(first.into());
            }
            log::warn!("covariance factorization failed ({first}); retrying with diagonal shift {shift:e}");
            for i in 0..n {
                gamma[(i, i)] += shift;
            }
            let mut op = GammaOperator::from_dense(&gamma, floor + shift)?;
            op.jittered = true;
            Ok(op)
        }
    }
}
