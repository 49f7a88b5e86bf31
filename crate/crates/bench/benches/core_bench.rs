use criterion::{criterion_group, criterion_main, Criterion};
use gkdv_bench::{bench_profiles, bench_solver};
use gkdv_core::grid::GridSpec;
use gkdv_core::profiles::ProfileSet;
use gkdv_core::reduced::{exact_solution, integrate, params_from_beta};
use std::hint::black_box;

fn profiles_build(c: &mut Criterion) {
    c.bench_function("profiles_build_n2001", |b| {
        b.iter(|| {
            let p = ProfileSet::build(GridSpec::new(-20.0, 20.0, 2001).unwrap()).unwrap();
            black_box(p.int_q)
        })
    });
}

fn pde_step(c: &mut Criterion) {
    let (solver, u0) = bench_solver();
    c.bench_function("etdrk4_step_n2048", |b| {
        b.iter(|| black_box(solver.step(&u0).unwrap()))
    });
}

fn reduced_integrate(c: &mut Criterion) {
    let profiles = bench_profiles();
    let params = params_from_beta(0.4, profiles.int_q, 100.0).unwrap();
    c.bench_function("reduced_integrate_100x", |b| {
        b.iter(|| {
            let traj = integrate(
                &exact_solution(&params, 100.0),
                &params,
                10_000.0,
                1e-10,
                257,
            )
            .unwrap();
            black_box(traj.states.len())
        })
    });
}

fn decompose_synthetic(c: &mut Criterion) {
    use gkdv_core::modulation::{decompose, DecomposeOptions, ModulationState};
    use gkdv_core::pde::{build_tail, compose_initial_data, DomainSpec, TailSpec};
    let profiles = ProfileSet::reference().unwrap();
    let d = DomainSpec::new(-64.0, 64.0, 2048).unwrap();
    let tail = TailSpec {
        c0: -0.7,
        theta: 1.4,
        x0: 20.0,
        cutoff_start: 40.0,
        cutoff_width: 8.0,
    };
    let q0 = build_tail(&tail, &d).unwrap();
    let u = compose_initial_data(0.8, 0.01, 25.0, None, &q0, &profiles).unwrap();
    let guess = ModulationState {
        s: 1.0,
        t: 0.0,
        lambda: 0.81,
        x: 25.01,
        b: 0.011,
        p: 0.0,
    };
    c.bench_function("decompose_n2048", |b| {
        b.iter(|| {
            let out = decompose(&u, &q0, &guess, &profiles, &DecomposeOptions::default()).unwrap();
            black_box(out.2.iterations)
        })
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = profiles_build, pde_step, reduced_integrate, decompose_synthetic
}
criterion_main!(benches);
