//! Shared fixtures for the pipeline benchmarks.

use elasto_core::{
    assemble_psi, bottom_clamp, calibrate_traction, forward_solve, generate_mesh, make_phantom,
    ForwardSolution, Mesh, MeshParams, PsiTensor,
};

pub struct Fixture {
    pub mesh: Mesh,
    pub psi: PsiTensor,
    pub truth: Vec<f64>,
    pub forward: ForwardSolution,
}

/// A 50/10 kPa phantom on a jittered mesh of roughly `nodes` nodes.
pub fn fixture(nodes: usize) -> Fixture {
    let mesh = generate_mesh(&MeshParams { target_nodes: nodes, seed: 1, ..Default::default() })
        .expect("mesh");
    let psi = assemble_psi(&mesh, 0.495, &bottom_clamp(&mesh)).expect("assembly");
    let phantom = make_phantom(&mesh, 1e4, 5e4, [0.5, 0.5], 0.2).expect("phantom");
    let load = calibrate_traction(&psi, &mesh, &phantom.modulus, 0.01).expect("traction");
    let forward = forward_solve(&psi, &phantom.modulus, &load).expect("forward");
    Fixture { truth: phantom.modulus.to_vec(), mesh, psi, forward }
}
