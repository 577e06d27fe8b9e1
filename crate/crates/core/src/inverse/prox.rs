//! Proximal maps: graph total variation over mesh edges and the nonnegativity projection.

use crate::mesh::Mesh;

/// A convex penalty usable as the nonsmooth term of the splitting.
pub trait Regularizer {
    fn value(&self, x: &[f64]) -> f64;

    /// `argmin_z ½‖z − x‖² + weight · value(z)`
    fn prox(&self, x: &[f64], weight: f64) -> Vec<f64>;
}

/// `TV(x) = Σ_{(i,j)} w_ij |x_i − x_j|` over mesh edges, `w_ij` the edge length.
///
/// The prox is computed on the dual: with `(A x)_e = w_e (x_i − x_j)`, the minimizer is
/// `x = y − Aᵀ p` for the box-constrained `p ∈ [−weight, weight]^E` minimizing
/// `½‖y − Aᵀ p‖²`, solved by accelerated projected gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct TotalVariation {
    edges: Vec<(usize, usize, f64)>,
    n: usize,
    /// Upper bound on `‖A‖²`.
    lipschitz: f64,
    pub max_iters: usize,
    /// Stop once `‖x_k − x_{k−1}‖ ≤ tolerance · ‖x_k‖`.
    pub tolerance: f64,
}

impl TotalVariation {
    pub fn from_mesh(mesh: &Mesh) -> Self {
        let nodes = mesh.nodes();
        let edges = mesh
            .edges()
            .into_iter()
            .map(|(a, b)| {
                let (pa, pb) = (nodes[a], nodes[b]);
                (a, b, ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2)).sqrt())
            })
            .collect();
        Self::from_edges(mesh.node_count(), edges)
    }

    pub fn from_edges(n: usize, edges: Vec<(usize, usize, f64)>) -> Self {
        let mut degree = vec![0.0; n];
        for &(a, b, w) in &edges {
            assert!(a < n && b < n && a != b, "invalid edge ({a}, {b})");
            degree[a] += w * w;
            degree[b] += w * w;
        }
        // Gershgorin on the weighted Laplacian AᵀA
        let lipschitz = 2.0 * degree.iter().copied().fold(0.0, f64::max);
        Self {
            edges,
            n,
            lipschitz,
            max_iters: 200,
            tolerance: 1e-9,
        }
    }

    pub fn with_iterations(mut self, max_iters: usize, tolerance: f64) -> Self {
        self.max_iters = max_iters;
        self.tolerance = tolerance;
        self
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    fn primal(&self, y: &[f64], p: &[f64], x: &mut [f64]) {
        x.copy_from_slice(y);
        for (&(a, b, w), &pe) in self.edges.iter().zip(p) {
            x[a] -= w * pe;
            x[b] += w * pe;
        }
    }
}

impl Regularizer for TotalVariation {
    fn value(&self, x: &[f64]) -> f64 {
        self.edges
            .iter()
            .map(|&(a, b, w)| w * (x[a] - x[b]).abs())
            .sum()
    }

    fn prox(&self, y: &[f64], weight: f64) -> Vec<f64> {
        assert_eq!(y.len(), self.n, "field length must match the mesh");
        if weight == 0.0 || self.edges.is_empty() {
            return y.to_vec();
        }
        assert!(weight > 0.0, "prox weight must be nonnegative");
        let m = self.edges.len();
        let step = 1.0 / self.lipschitz;
        let mut p = vec![0.0; m];
        let mut p_prev = vec![0.0; m];
        let mut q = vec![0.0; m];
        let mut x = y.to_vec();
        let mut x_prev = y.to_vec();
        let mut t = 1.0f64;
        for _ in 0..self.max_iters {
            // gradient step on the dual at the extrapolated point q
            self.primal(y, &q, &mut x);
            for (k, &(a, b, w)) in self.edges.iter().enumerate() {
                p[k] = (q[k] + step * w * (x[a] - x[b])).clamp(-weight, weight);
            }
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let beta = (t - 1.0) / t_next;
            for k in 0..m {
                q[k] = p[k] + beta * (p[k] - p_prev[k]);
            }
            t = t_next;
            p_prev.copy_from_slice(&p);

            self.primal(y, &p, &mut x);
            let change = crate::linalg::distance(&x, &x_prev);
            let scale = crate::linalg::norm(&x).max(f64::MIN_POSITIVE);
            x_prev.copy_from_slice(&x);
            if change <= self.tolerance * scale {
                break;
            }
        }
        self.primal(y, &p, &mut x);
        x
    }
}

/// Componentwise `max(x, floor)`.
pub fn prox_nonneg(x: &[f64], floor: f64) -> Vec<f64> {
    x.iter().map(|&v| v.max(floor)).collect()
}
