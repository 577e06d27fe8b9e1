use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use elasto_bench::fixture;
use elasto_core::{
    assemble_psi, bottom_clamp, calibrate_noise, gamma_update, observe, reconstruct,
    InverseProblem, SolverConfig,
};

fn assembly(c: &mut Criterion) {
    let fx = fixture(300);
    let bc = bottom_clamp(&fx.mesh);
    c.bench_function("assemble_psi_300", |b| b.iter(|| assemble_psi(black_box(&fx.mesh), 0.495, &bc).unwrap()));
    c.bench_function("free_stiffness_300", |b| b.iter(|| fx.psi.free_stiffness(black_box(&fx.truth)).unwrap()));
}

fn covariance(c: &mut Criterion) {
    let fx = fixture(300);
    let noise = calibrate_noise(&fx.psi, &fx.forward.u, 0.09, 0.03, 0)
        .unwrap()
        .with_force_fraction(&fx.forward.f_true, 0.01);
    c.bench_function("gamma_update_300", |b| b.iter(|| gamma_update(&fx.psi, black_box(&fx.truth), &noise).unwrap()));
}

fn solver(c: &mut Criterion) {
    let fx = fixture(200);
    let noise = calibrate_noise(&fx.psi, &fx.forward.u, 0.09, 0.03, 0)
        .unwrap()
        .with_force_fraction(&fx.forward.f_true, 0.01);
    let obs = observe(&fx.psi, &fx.forward, &noise);
    let problem = InverseProblem::new(&fx.mesh, &fx.psi, &obs.f, &obs.um).unwrap();
    let config = SolverConfig { lambda: 5e-4, outer_iters: 3, ..Default::default() };
    let mut group = c.benchmark_group("reconstruct");
    group.sample_size(10);
    group.bench_function("statistical_200", |b| b.iter(|| reconstruct(&problem, &noise, &config).unwrap()));
    group.finish();
}

criterion_group!(benches, assembly, covariance, solver);
criterion_main!(benches);
