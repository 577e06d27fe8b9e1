use std::time::Instant;

use super::{
    gamma_update, lipschitz_step, prox_nonneg, DataFidelity, GammaOperator, InverseError,
    Regularizer, TotalVariation,
};
use crate::fem::PsiTensor;
use crate::linalg::{distance, dot, norm};
use crate::mesh::Mesh;
use crate::sparse::CsrMatrix;
use crate::synth::NoiseModel;

/// Starting field `Ê₀`.
#[derive(Clone, Debug, PartialEq, Default)]
pub enum InitialModulus {
    /// Homogeneous field fitted to the data under the solver's own covariance; with `Γ = I`
    /// this is [`homogeneous_fit`].
    #[default]
    Auto,
    Uniform(f64),
    Field(Vec<f64>),
}

/// How the TV prox and the nonnegativity projection are combined.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ProxComposition {
    /// `prox_nonneg ∘ prox_tv`.
    #[default]
    Composed,
    /// Dykstra-type splitting for the prox of `TV + ι_{E ≥ floor}`.
    Dykstra { iterations: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub lambda: f64,
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub tv_inner_iters: usize,
    pub tv_tolerance: f64,
    /// Inner loop stops once `‖E_{k+1} − E_k‖ / ‖E_k‖` falls below this.
    pub tolerance: f64,
    pub initial: InitialModulus,
    pub floor: f64,
    pub power_seed: u64,
    pub composition: ProxComposition,
    pub max_halvings: usize,
    pub divergence_factor: f64,
    /// Nesterov momentum on the inner steps, restarted whenever a step fails to descend.
    pub accelerated: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            outer_iters: 10,
            inner_iters: 50,
            tv_inner_iters: 200,
            tv_tolerance: 1e-9,
            tolerance: 1e-6,
            initial: InitialModulus::Auto,
            floor: 0.0,
            power_seed: 0,
            composition: ProxComposition::Composed,
            max_halvings: 10,
            divergence_factor: 1e6,
            accelerated: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), InverseError> {
        let bad = |m: &str| Err(InverseError::InvalidConfig(m.to_string()));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be finite and nonnegative");
        }
        if self.outer_iters == 0 || self.inner_iters == 0 || self.tv_inner_iters == 0 {
            return bad("iteration counts must be at least 1");
        }
        if !(self.tolerance >= 0.0) || !(self.tv_tolerance >= 0.0) {
            return bad("tolerances must be nonnegative");
        }
        if !(self.floor >= 0.0 && self.floor.is_finite()) {
            return bad("floor must be finite and nonnegative");
        }
        if !(self.divergence_factor > 1.0) {
            return bad("divergence factor must exceed 1");
        }
        if let ProxComposition::Dykstra { iterations: 0 } = self.composition {
            return bad("Dykstra iterations must be at least 1");
        }
        match &self.initial {
            InitialModulus::Uniform(v) if !(*v > 0.0 && v.is_finite()) => bad("initial modulus must be positive"),
            InitialModulus::Field(f) if f.iter().any(|v| !(*v > 0.0 && v.is_finite())) => {
                bad("initial modulus must be positive")
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InnerRecord {
    pub outer: usize,
    pub inner: usize,
    pub g: f64,
    pub tv: f64,
    pub cost: f64,
    pub step: f64,
    pub rel_change: f64,
    pub halvings: usize,
    pub restarted: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OuterRecord {
    pub outer: usize,
    pub gamma_seconds: f64,
    pub log_det: f64,
    pub gamma_jittered: bool,
    pub lipschitz: f64,
    pub lipschitz_converged: bool,
    pub step: f64,
    pub inner_iterations: usize,
    pub cost_start: f64,
    pub cost_end: f64,
    /// True when every step-halving failed to decrease the cost.
    pub stalled: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SolverTrace {
    pub inner: Vec<InnerRecord>,
    pub outer: Vec<OuterRecord>,
    pub initial_modulus: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    pub modulus: Vec<f64>,
    pub trace: SolverTrace,
}

/// Observations and operators shared by the statistical and the baseline solvers.
#[derive(Clone, Debug)]
pub struct InverseProblem<'a> {
    psi: &'a PsiTensor,
    d: CsrMatrix,
    f: Vec<f64>,
    tv: TotalVariation,
}

impl<'a> InverseProblem<'a> {
    /// `f` and `u^m` are full-length DOF vectors; only their free entries are used.
    pub fn new(mesh: &Mesh, psi: &'a PsiTensor, f: &[f64], um: &[f64]) -> Result<Self, InverseError> {
        let dofs = psi.dof_count();
        if mesh.node_count() != psi.node_count() {
            return Err(InverseError::DimensionMismatch {
                what: "mesh nodes",
                expected: psi.node_count(),
                got: mesh.node_count(),
            });
        }
        for (what, len) in [("force", f.len()), ("displacement", um.len())] {
            if len != dofs {
                return Err(InverseError::DimensionMismatch { what, expected: dofs, got: len });
            }
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(crate::fem::FemError::NonFinite("force").into());
        }
        Ok(Self {
            psi,
            d: psi.dmatrix_free(um)?,
            f: psi.restrict_free(f),
            tv: TotalVariation::from_mesh(mesh),
        })
    }

    pub fn psi(&self) -> &PsiTensor {
        self.psi
    }

    /// `D(u^m)` on the free rows.
    pub fn dmatrix(&self) -> &CsrMatrix {
        &self.d
    }

    pub fn force(&self) -> &[f64] {
        &self.f
    }

    pub fn total_variation(&self) -> &TotalVariation {
        &self.tv
    }
}

/// `c = (D1)ᵀ f / ‖D1‖²`, the best homogeneous field in the unweighted least-squares sense.
pub fn homogeneous_fit(d: &CsrMatrix, f: &[f64]) -> Result<f64, InverseError> {
    let d1 = d.mul_vec(&vec![1.0; d.ncols()]);
    let denom = dot(&d1, &d1);
    let c = dot(&d1, f) / denom;
    if !(denom > 0.0) || !(c > 0.0) || !c.is_finite() {
        return Err(InverseError::InvalidConfig(format!(
            "homogeneous fit gives non-positive modulus {c:e}; set an explicit initial modulus"
        )));
    }
    Ok(c)
}

/// Statistical reconstruction: `Γ` refreshed from the current estimate at every outer
/// iteration, proximal-gradient steps on `g + λ TV` subject to `E ≥ floor` inside.
pub fn reconstruct(
    problem: &InverseProblem,
    noise: &NoiseModel,
    config: &SolverConfig,
) -> Result<Reconstruction, InverseError> {
    run(problem, config, |e| gamma_update(problem.psi, e, noise))
}

/// The same loop with `Γ = I`, i.e. unweighted least squares plus TV.
pub fn baseline_lsq(problem: &InverseProblem, config: &SolverConfig) -> Result<Reconstruction, InverseError> {
    let identity = GammaOperator::identity(problem.f.len());
    run(problem, config, |_| Ok(identity.clone()))
}

/// Homogeneous field minimizing the weighted data term, with `Γ` evaluated at the field
/// itself: `c ← (D1)ᵀ Γ(c)⁻¹ f / (D1)ᵀ Γ(c)⁻¹ D1`, started from [`homogeneous_fit`].
fn weighted_homogeneous_fit(
    problem: &InverseProblem,
    covariance: &mut impl FnMut(&[f64]) -> Result<GammaOperator, InverseError>,
) -> Result<f64, InverseError> {
    let n = problem.d.ncols();
    let d1 = problem.d.mul_vec(&vec![1.0; n]);
    let mut c = homogeneous_fit(&problem.d, &problem.f)?;
    for _ in 0..HOMOGENEOUS_FIT_ITERS {
        let gamma = covariance(&vec![c; n])?;
        let w = gamma.solve(&d1);
        let next = dot(&w, &problem.f) / dot(&w, &d1);
        if !(next > 0.0 && next.is_finite()) {
            return Err(InverseError::InvalidConfig(format!(
                "weighted homogeneous fit gives non-positive modulus {next:e}; set an explicit initial modulus"
            )));
        }
        let done = (next - c).abs() <= 1e-8 * c;
        c = next;
        if done {
            break;
        }
    }
    Ok(c)
}

const HOMOGENEOUS_FIT_ITERS: usize = 50;

fn initial_field(
    problem: &InverseProblem,
    config: &SolverConfig,
    covariance: &mut impl FnMut(&[f64]) -> Result<GammaOperator, InverseError>,
) -> Result<Vec<f64>, InverseError> {
    let n = problem.d.ncols();
    match &config.initial {
        InitialModulus::Auto => Ok(vec![weighted_homogeneous_fit(problem, covariance)?; n]),
        InitialModulus::Uniform(v) => Ok(vec![*v; n]),
        InitialModulus::Field(f) if f.len() == n => Ok(f.clone()),
        InitialModulus::Field(f) => Err(InverseError::DimensionMismatch {
            what: "initial modulus",
            expected: n,
            got: f.len(),
        }),
    }
}

fn prox_step(tv: &TotalVariation, z: &[f64], weight: f64, config: &SolverConfig) -> Vec<f64> {
    match config.composition {
        ProxComposition::Composed => prox_nonneg(&tv.prox(z, weight), config.floor),
        ProxComposition::Dykstra { iterations } => {
            let n = z.len();
            let mut x = z.to_vec();
            let mut p = vec![0.0; n];
            let mut q = vec![0.0; n];
            for _ in 0..iterations {
                let shifted: Vec<f64> = x.iter().zip(&p).map(|(a, b)| a + b).collect();
                let y = tv.prox(&shifted, weight);
                for i in 0..n {
                    p[i] = shifted[i] - y[i];
                }
                let shifted: Vec<f64> = y.iter().zip(&q).map(|(a, b)| a + b).collect();
                let next = prox_nonneg(&shifted, config.floor);
                for i in 0..n {
                    q[i] = shifted[i] - next[i];
                }
                let change = distance(&next, &x);
                x = next;
                if change <= config.tv_tolerance * norm(&x) {
                    break;
                }
            }
            x
        }
    }
}

fn run(
    problem: &InverseProblem,
    config: &SolverConfig,
    mut covariance: impl FnMut(&[f64]) -> Result<GammaOperator, InverseError>,
) -> Result<Reconstruction, InverseError> {
    config.validate()?;
    let tv = problem
        .tv
        .clone()
        .with_iterations(config.tv_inner_iters, config.tv_tolerance);
    let lambda = config.lambda;
    let mut e = prox_nonneg(&initial_field(problem, config, &mut covariance)?, config.floor);
    let mut trace = SolverTrace {
        initial_modulus: e.iter().sum::<f64>() / e.len() as f64,
        ..Default::default()
    };

    for outer in 0..config.outer_iters {
        let started = Instant::now();
        let gamma = covariance(&e)?;
        let gamma_seconds = started.elapsed().as_secs_f64();
        let fid = DataFidelity::new(&problem.d, &problem.f, &gamma);
        let (mut step, estimate) = lipschitz_step(&problem.d, &gamma, config.power_seed);
        let (mut g, mut grad) = fid.cost_and_grad(&e);
        let mut tv_value = tv.value(&e);
        let mut cost = g + lambda * tv_value;
        if !cost.is_finite() {
            return Err(InverseError::NonFinite { outer, inner: 0 });
        }
        let cost_start = cost;
        let limit = config.divergence_factor * cost_start.max(f64::MIN_POSITIVE);
        let mut record = OuterRecord {
            outer,
            gamma_seconds,
            log_det: gamma.log_det(),
            gamma_jittered: gamma.jittered(),
            lipschitz: estimate.constant,
            lipschitz_converged: estimate.converged,
            step,
            inner_iterations: 0,
            cost_start,
            cost_end: cost,
            stalled: false,
        };

        // momentum state: e_prev is the previous accepted iterate, beta the extrapolation weight
        let mut e_prev = e.clone();
        let mut t = 1.0f64;
        let mut beta = 0.0;
        for inner in 0..config.inner_iters {
            let mut halvings = 0;
            let mut restarted = false;
            let accepted = loop {
                let (base, base_grad) = if beta > 0.0 {
                    let y: Vec<f64> = e.iter().zip(&e_prev).map(|(a, b)| a + beta * (a - b)).collect();
                    let gy = fid.grad(&y);
                    (y, gy)
                } else {
                    (e.clone(), grad.clone())
                };
                let z: Vec<f64> = base.iter().zip(&base_grad).map(|(x, d)| x - step * d).collect();
                let candidate = prox_step(&tv, &z, lambda * step, config);
                let (gc, gradc) = fid.cost_and_grad(&candidate);
                let tvc = tv.value(&candidate);
                let costc = gc + lambda * tvc;
                if !costc.is_finite() {
                    return Err(InverseError::NonFinite { outer, inner });
                }
                if costc > limit {
                    trace.outer.push(record);
                    return Err(InverseError::Diverged {
                        outer,
                        cost: costc,
                        limit,
                        trace: Box::new(trace),
                    });
                }
                if costc <= cost {
                    break Some((candidate, gc, gradc, tvc, costc));
                }
                if beta > 0.0 {
                    // drop the momentum before shrinking the step
                    beta = 0.0;
                    t = 1.0;
                    restarted = true;
                    continue;
                }
                if halvings == config.max_halvings {
                    break None;
                }
                step *= 0.5;
                halvings += 1;
            };
            let Some((candidate, gc, gradc, tvc, costc)) = accepted else {
                record.stalled = true;
                break;
            };
            let rel_change = distance(&candidate, &e) / norm(&e).max(f64::MIN_POSITIVE);
            e_prev = std::mem::replace(&mut e, candidate);
            (g, grad, tv_value, cost) = (gc, gradc, tvc, costc);
            if config.accelerated {
                let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
                beta = (t - 1.0) / t_next;
                t = t_next;
            }
            trace.inner.push(InnerRecord {
                outer,
                inner,
                g,
                tv: tv_value,
                cost,
                step,
                rel_change,
                halvings,
                restarted,
            });
            record.inner_iterations += 1;
            record.cost_end = cost;
            if rel_change < config.tolerance {
                break;
            }
        }
        log::debug!(
            "outer {outer}: cost {:.6e} -> {:.6e} in {} steps",
            record.cost_start,
            record.cost_end,
            record.inner_iterations
        );
        trace.outer.push(record);
    }
    Ok(Reconstruction { modulus: e, trace })
}
