//! Quasi-static elasticity imaging: a linear finite-element forward model on triangle
//! meshes, synthetic noisy observations, and reconstruction of the Young's modulus field
//! by proximal splitting with signal-dependent colored-noise weighting.

pub mod fem;
pub mod inverse;
pub mod linalg;
pub mod mesh;
pub mod metrics;
pub mod sparse;
pub mod synth;

pub use fem::{
    assemble_psi, DirichletBc, FemError, FieldVector, ModulusField, PsiTensor,
};
pub use inverse::{
    baseline_lsq, gamma_update, reconstruct, GammaOperator, InitialModulus, InverseError,
    InverseProblem, ProxComposition, Reconstruction, SolverConfig, SolverTrace,
    TotalVariation,
};
pub use mesh::{generate_mesh, load_mesh, save_mesh, Mesh, MeshError, MeshParams};
pub use metrics::{cnr, rms_error, snr_db, Metric, MetricError, Region, RegionLabels};
pub use synth::{
    bottom_clamp, calibrate_noise, calibrate_noise_snr, calibrate_traction, forward_solve,
    make_phantom, observe, ForwardSolution, Loading, NoiseModel, Observations, Phantom,
    SynthError,
};
