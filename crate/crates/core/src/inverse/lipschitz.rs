use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::GammaOperator;
use crate::linalg::{dot, norm};
use crate::sparse::CsrMatrix;

/// Safety factor applied to `1/L`.
pub const STEP_SAFETY: f64 = 0.9;

const MAX_POWER_ITERS: usize = 200;
const POWER_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LipschitzEstimate {
    pub constant: f64,
    pub iterations: usize,
    /// False when the power iteration stalled and the Frobenius bound was used instead.
    pub converged: bool,
}

/// Largest eigenvalue of `Dᵀ Γ⁻¹ D` by power iteration from a seeded random start.
pub fn lipschitz_constant(d: &CsrMatrix, gamma: &GammaOperator, seed: u64) -> LipschitzEstimate {
    let n = d.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
    let scale = norm(&x);
    x.iter_mut().for_each(|v| *v /= scale);

    let mut estimate = 0.0;
    for it in 1..=MAX_POWER_ITERS {
        let y = d.mul_transpose_vec(&gamma.solve(&d.mul_vec(&x)));
        let next = dot(&x, &y);
        let len = norm(&y);
        if !(len > 0.0) || !next.is_finite() {
            break;
        }
        for (xi, yi) in x.iter_mut().zip(&y) {
            *xi = yi / len;
        }
        if it > 1 && (next - estimate).abs() <= POWER_TOLERANCE * next.abs() {
            return LipschitzEstimate {
                constant: next,
                iterations: it,
                converged: true,
            };
        }
        estimate = next;
    }

    let bound = d.frobenius_norm_squared() / gamma.eigen_floor();
    log::warn!("power iteration did not converge; using Frobenius bound L = {bound:e}");
    LipschitzEstimate {
        constant: bound,
        iterations: MAX_POWER_ITERS,
        converged: false,
    }
}

/// `γ = STEP_SAFETY / L`.
pub fn lipschitz_step(d: &CsrMatrix, gamma: &GammaOperator, seed: u64) -> (f64, LipschitzEstimate) {
    let estimate = lipschitz_constant(d, gamma, seed);
    (STEP_SAFETY / estimate.constant, estimate)
}
