use super::GammaOperator;
use crate::sparse::CsrMatrix;

/// `g(E) = ½ (f − D E)ᵀ Γ⁻¹ (f − D E)` over the free DOFs.
#[derive(Clone, Copy, Debug)]
pub struct DataFidelity<'a> {
    d: &'a CsrMatrix,
    f: &'a [f64],
    gamma: &'a GammaOperator,
}

impl<'a> DataFidelity<'a> {
    pub fn new(d: &'a CsrMatrix, f: &'a [f64], gamma: &'a GammaOperator) -> Self {
        assert_eq!(d.nrows(), f.len(), "D rows must match the force vector");
        assert_eq!(d.nrows(), gamma.dim(), "D rows must match the covariance");
        Self { d, f, gamma }
    }

    pub fn residual(&self, modulus: &[f64]) -> Vec<f64> {
        let de = self.d.mul_vec(modulus);
        self.f.iter().zip(de).map(|(f, p)| f - p).collect()
    }

    pub fn cost(&self, modulus: &[f64]) -> f64 {
        let white = self.gamma.whiten(&self.residual(modulus));
        0.5 * white.iter().map(|v| v * v).sum::<f64>()
    }

    /// `∇g(E) = −Dᵀ Γ⁻¹ (f − D E)`
    pub fn grad(&self, modulus: &[f64]) -> Vec<f64> {
        self.cost_and_grad(modulus).1
    }

    pub fn cost_and_grad(&self, modulus: &[f64]) -> (f64, Vec<f64>) {
        // one forward substitution serves both the cost and the gradient
        let mut v = self.gamma.whiten(&self.residual(modulus));
        let cost = 0.5 * v.iter().map(|x| x * x).sum::<f64>();
        self.gamma.unwhiten_transpose_in_place(&mut v);
        let mut grad = self.d.mul_transpose_vec(&v);
        grad.iter_mut().for_each(|g| *g = -*g);
        (cost, grad)
    }
}

pub fn cost_g(d: &CsrMatrix, f: &[f64], gamma: &GammaOperator, modulus: &[f64]) -> f64 {
    DataFidelity::new(d, f, gamma).cost(modulus)
}

pub fn grad_g(d: &CsrMatrix, f: &[f64], gamma: &GammaOperator, modulus: &[f64]) -> Vec<f64> {
    DataFidelity::new(d, f, gamma).grad(modulus)
}
