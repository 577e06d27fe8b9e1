//! Synthetic phantoms and noisy observations.
//!
//! A phantom is a homogeneous background with one circular inclusion. The ideal forward
//! problem is solved under a uniform downward traction on the top edge with the bottom edge
//! clamped; Gaussian noise is then added to the displacements (distinct lateral and axial
//! variances) and to the nodal forces. Dirichlet DOFs never receive noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::fem::{axial_dof, DirichletBc, FemError, FieldVector, ModulusField, PsiTensor};
use crate::linalg::{norm, Cholesky, FactorError};
use crate::mesh::Mesh;
use crate::metrics::RegionLabels;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid phantom: {0}")]
    InvalidPhantom(String),
    #[error("stiffness is not positive definite: {0}")]
    Indefinite(#[from] FactorError),
    #[error("noise level must lie in [0, 1), got {0}")]
    InvalidNoiseLevel(f64),
    #[error("{0} displacement component is identically zero")]
    ZeroDisplacement(&'static str),
    #[error("noise level undefined for a zero measurement")]
    ZeroDenominator,
    #[error("forward residual {residual:e} exceeds tolerance")]
    Residual { residual: f64 },
    #[error(transparent)]
    Fem(#[from] FemError),
}

/// Relative residual accepted from the forward solve.
pub const FORWARD_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Inclusion {
    pub center: [f64; 2],
    pub radius: f64,
    pub modulus: f64,
}

impl Inclusion {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let (dx, dy) = (p[0] - self.center[0], p[1] - self.center[1]);
        (dx * dx + dy * dy).sqrt() <= self.radius
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    pub modulus: ModulusField,
    pub background: f64,
    pub inclusion: Inclusion,
}

impl Phantom {
    /// Inclusion/background labels of the nodes.
    pub fn labels(&self, mesh: &Mesh) -> RegionLabels {
        RegionLabels::from_predicate(mesh.nodes().iter().map(|&p| self.inclusion.contains(p)))
    }
}

pub fn make_phantom(
    mesh: &Mesh,
    background: f64,
    inclusion_modulus: f64,
    center: [f64; 2],
    radius: f64,
) -> Result<Phantom, SynthError> {
    if !(background > 0.0 && inclusion_modulus > 0.0) {
        return Err(SynthError::InvalidPhantom(format!(
            "moduli must be positive, got background {background} and inclusion {inclusion_modulus}"
        )));
    }
    if !(radius > 0.0) {
        return Err(SynthError::InvalidPhantom(format!("radius must be positive, got {radius}")));
    }
    let inclusion = Inclusion {
        center,
        radius,
        modulus: inclusion_modulus,
    };
    let (lo, hi) = mesh.bounds();
    let nearest = [center[0].clamp(lo[0], hi[0]), center[1].clamp(lo[1], hi[1])];
    if !inclusion.contains(nearest) {
        log::warn!("inclusion at {center:?} with radius {radius} lies entirely outside the domain");
    }
    let modulus = mesh
        .nodes()
        .iter()
        .map(|&p| if inclusion.contains(p) { inclusion_modulus } else { background })
        .collect::<Vec<_>>()
        .into();
    Ok(Phantom {
        modulus,
        background,
        inclusion,
    })
}

/// Clamps every bottom-edge node.
pub fn bottom_clamp(mesh: &Mesh) -> DirichletBc {
    DirichletBc::clamped(mesh.boundary().bottom.iter().copied())
        .expect("boundary sets hold unique node ids")
}

/// Applied surface load and its consistent nodal forces.
#[derive(Clone, Debug, PartialEq)]
pub struct Loading {
    /// Downward traction on the top edge, Pa.
    pub traction: f64,
    pub force: FieldVector,
}

impl Loading {
    /// Uniform downward traction on the top edge, lumped half to each end of every edge.
    pub fn top_traction(mesh: &Mesh, traction: f64) -> Self {
        let mut force = FieldVector::zeros(2 * mesh.node_count());
        let top = &mesh.boundary().top;
        for (a, b) in mesh.boundary_edges() {
            if !(top.contains(&a) && top.contains(&b)) {
                continue;
            }
            let (pa, pb) = (mesh.nodes()[a], mesh.nodes()[b]);
            let length = ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2)).sqrt();
            let share = 0.5 * traction * mesh.thickness() * length;
            force[axial_dof(a)] -= share;
            force[axial_dof(b)] -= share;
        }
        Self { traction, force }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            traction: self.traction * factor,
            force: self.force.iter().map(|f| f * factor).collect::<Vec<_>>().into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardSolution {
    pub u: FieldVector,
    pub f_true: FieldVector,
    /// `‖K u − f‖ / ‖f‖` over the free DOFs.
    pub residual: f64,
}

/// Solves `K(E) u = f` on the free DOFs with the Dirichlet values imposed.
pub fn forward_solve(
    psi: &PsiTensor,
    modulus: &[f64],
    loading: &Loading,
) -> Result<ForwardSolution, SynthError> {
    if modulus.iter().any(|&e| !(e > 0.0)) {
        return Err(SynthError::InvalidPhantom("forward modulus must be positive".into()));
    }
    let kff = psi.free_stiffness(modulus)?;
    let chol = Cholesky::factor(&kff.to_dense())?;
    let rhs = psi.restrict_free(&psi.dirichlet_rhs(modulus, &loading.force)?);

    let mut x = chol.solve(&rhs);
    let mut residual = vec![0.0; rhs.len()];
    for _ in 0..2 {
        let kx = kff.mul_vec(&x);
        for k in 0..rhs.len() {
            residual[k] = rhs[k] - kx[k];
        }
        let dx = chol.solve(&residual);
        for k in 0..x.len() {
            x[k] += dx[k];
        }
    }
    let kx = kff.mul_vec(&x);
    let rnorm = norm(&rhs.iter().zip(&kx).map(|(a, b)| a - b).collect::<Vec<_>>());
    let fnorm = norm(&rhs);
    let rel = if fnorm > 0.0 { rnorm / fnorm } else { rnorm };
    if rel > FORWARD_TOLERANCE {
        return Err(SynthError::Residual { residual: rel });
    }
    Ok(ForwardSolution {
        u: psi.expand_free(&x),
        f_true: loading.force.clone(),
        residual: rel,
    })
}

/// Traction whose solution has peak axial displacement equal to `fraction × height`.
pub fn calibrate_traction(
    psi: &PsiTensor,
    mesh: &Mesh,
    modulus: &[f64],
    fraction: f64,
) -> Result<Loading, SynthError> {
    let unit = Loading::top_traction(mesh, 1.0);
    let solution = forward_solve(psi, modulus, &unit)?;
    let peak = (0..mesh.node_count())
        .map(|n| solution.u.axial(n).abs())
        .fold(0.0, f64::max);
    if peak == 0.0 {
        return Err(SynthError::ZeroDisplacement("axial"));
    }
    let (lo, hi) = mesh.bounds();
    Ok(unit.scaled(fraction * (hi[1] - lo[1]) / peak))
}

/// Diagonal displacement covariance (per direction) and force covariance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseModel {
    pub sigma_lat: f64,
    pub sigma_ax: f64,
    pub sigma_f: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn noiseless(seed: u64) -> Self {
        Self {
            sigma_lat: 0.0,
            sigma_ax: 0.0,
            sigma_f: 0.0,
            seed,
        }
    }

    /// Diagonal of `Σ_n` over the free DOFs, in [`PsiTensor::free_dofs`] order.
    pub fn displacement_variances(&self, psi: &PsiTensor) -> Vec<f64> {
        psi.free_dofs()
            .iter()
            .map(|&d| if d % 2 == 0 { self.sigma_lat.powi(2) } else { self.sigma_ax.powi(2) })
            .collect()
    }

    /// Diagonal of `Σ_w` over the free DOFs.
    pub fn force_variances(&self, psi: &PsiTensor) -> Vec<f64> {
        vec![self.sigma_f.powi(2); psi.free_dofs().len()]
    }

    /// Sets `σ_f` to a fraction of the largest applied nodal force.
    pub fn with_force_fraction(mut self, f_true: &[f64], fraction: f64) -> Self {
        let peak = f_true.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        self.sigma_f = fraction * peak;
        self
    }
}

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `u^m = u + n` with `n ~ N(0, Σ_n)` on the free DOFs. Returns `(u^m, n)`.
pub fn add_noise(psi: &PsiTensor, u: &[f64], noise: &NoiseModel) -> (FieldVector, FieldVector) {
    let mut rng = rng_stream(noise.seed, 0);
    let mut n = vec![0.0; u.len()];
    for &d in psi.free_dofs() {
        let sigma = if d % 2 == 0 { noise.sigma_lat } else { noise.sigma_ax };
        let z: f64 = StandardNormal.sample(&mut rng);
        n[d] = sigma * z;
    }
    let um: Vec<f64> = u.iter().zip(&n).map(|(a, b)| a + b).collect();
    (um.into(), n.into())
}

/// `f = f_true + w` with `w ~ N(0, σ_f² I)` on the free DOFs. Returns `(f, w)`.
pub fn add_force_noise(psi: &PsiTensor, f_true: &[f64], noise: &NoiseModel) -> (FieldVector, FieldVector) {
    let mut rng = rng_stream(noise.seed, 1);
    let mut w = vec![0.0; f_true.len()];
    for &d in psi.free_dofs() {
        let z: f64 = StandardNormal.sample(&mut rng);
        w[d] = noise.sigma_f * z;
    }
    let f: Vec<f64> = f_true.iter().zip(&w).map(|(a, b)| a + b).collect();
    (f.into(), w.into())
}

/// `Δ = ‖u^m − u‖ / ‖u^m‖`.
pub fn noise_level(um: &[f64], u: &[f64]) -> Result<f64, SynthError> {
    let denom = norm(um);
    if denom == 0.0 {
        return Err(SynthError::ZeroDenominator);
    }
    Ok(crate::linalg::distance(um, u) / denom)
}

/// Lateral or axial entries of an interleaved vector.
pub fn direction(v: &[f64], axial: bool) -> Vec<f64> {
    v.iter().skip(usize::from(axial)).step_by(2).copied().collect()
}

/// Realized `(Δ_lat, Δ_ax)`.
pub fn directional_noise_levels(um: &[f64], u: &[f64]) -> Result<(f64, f64), SynthError> {
    Ok((
        noise_level(&direction(um, false), &direction(u, false))?,
        noise_level(&direction(um, true), &direction(u, true))?,
    ))
}

/// Noise-to-signal ratio `‖n‖ / ‖u‖` whose expected realized level is `Δ`.
fn ratio_for_level(level: f64) -> f64 {
    level / (1.0 - level * level).sqrt()
}

/// Per-direction standard deviations whose expected realized noise levels are `Δ_lat`, `Δ_ax`.
///
/// With independent noise, `E‖u + n‖² = ‖u‖² + Nσ²`, so `Δ² ≈ Nσ² / (‖u‖² + Nσ²)`, which
/// gives `σ √N / ‖u‖ = Δ / √(1 − Δ²)`. `N` counts the free DOFs of that direction.
pub fn calibrate_noise(
    psi: &PsiTensor,
    u: &[f64],
    level_lat: f64,
    level_ax: f64,
    seed: u64,
) -> Result<NoiseModel, SynthError> {
    let mut sigma = [0.0; 2];
    for (k, (level, name)) in [(level_lat, "lateral"), (level_ax, "axial")].into_iter().enumerate() {
        if !(0.0..1.0).contains(&level) {
            return Err(SynthError::InvalidNoiseLevel(level));
        }
        let component = direction(u, k == 1);
        let unorm = norm(&component);
        if unorm == 0.0 {
            return Err(SynthError::ZeroDisplacement(name));
        }
        let free = psi.free_dofs().iter().filter(|&&d| d % 2 == k).count();
        sigma[k] = ratio_for_level(level) * unorm / (free as f64).sqrt();
    }
    Ok(NoiseModel {
        sigma_lat: sigma[0],
        sigma_ax: sigma[1],
        sigma_f: 0.0,
        seed,
    })
}

/// Noise model with a fixed lateral-to-axial noise-level ratio whose expected overall SNR
/// equals `snr_db`.
pub fn calibrate_noise_snr(
    psi: &PsiTensor,
    u: &[f64],
    snr_db: f64,
    lateral_to_axial: f64,
    seed: u64,
) -> Result<NoiseModel, SynthError> {
    let lat = norm(&direction(u, false)).powi(2);
    let ax = norm(&direction(u, true)).powi(2);
    let target = (lat + ax) * 10f64.powf(-snr_db / 10.0);
    let expected = |level_ax: f64| {
        let level_lat = (lateral_to_axial * level_ax).min(0.999_999);
        ratio_for_level(level_lat).powi(2) * lat + ratio_for_level(level_ax).powi(2) * ax
    };
    let (mut lo, mut hi) = (0.0, (0.999_999f64).min(0.999_999 / lateral_to_axial.max(1e-12)));
    if expected(hi) < target {
        return Err(SynthError::InvalidNoiseLevel(hi));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if expected(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let level_ax = 0.5 * (lo + hi);
    calibrate_noise(psi, u, (lateral_to_axial * level_ax).min(0.999_999), level_ax, seed)
}

/// Everything produced by one synthetic acquisition.
#[derive(Clone, Debug, PartialEq)]
pub struct Observations {
    pub u: FieldVector,
    pub um: FieldVector,
    pub f_true: FieldVector,
    pub f: FieldVector,
    pub n: FieldVector,
    pub w: FieldVector,
    pub noise: NoiseModel,
}

pub fn observe(psi: &PsiTensor, forward: &ForwardSolution, noise: &NoiseModel) -> Observations {
    let (um, n) = add_noise(psi, &forward.u, noise);
    let (f, w) = add_force_noise(psi, &forward.f_true, noise);
    Observations {
        u: forward.u.clone(),
        um,
        f_true: forward.f_true.clone(),
        f,
        n,
        w,
        noise: *noise,
    }
}
