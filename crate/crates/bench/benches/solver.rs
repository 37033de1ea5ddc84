use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use milqg_bench::{random_plant, scalar_benchmark};
use milqg_core::sim::{rollout, SimConfig, SimController};
use milqg_core::solver::{solve_beta, SolverConfig};
use milqg_core::{ControllerRaw, PsdMatrix, Tolerance};
use nalgebra::DMatrix;

fn bench_solve(c: &mut Criterion) {
    let cfg = SolverConfig::default();
    let (plant, cost) = scalar_benchmark();
    c.bench_function("solve_beta scalar beta=0.1", |b| {
        b.iter(|| black_box(solve_beta(&plant, &cost, black_box(0.1), &cfg).unwrap()))
    });

    let (plant4, cost4) = random_plant(7, 4, 3, 3);
    c.bench_function("solve_beta 4x3x3 moderate", |b| {
        b.iter(|| black_box(solve_beta(&plant4, &cost4, black_box(0.5), &cfg).unwrap()))
    });
}

fn bench_rollout(c: &mut Criterion) {
    let (plant, cost) = scalar_benchmark();
    let controller = SimController::Raw(ControllerRaw {
        h: DMatrix::from_element(1, 1, -0.3),
        sigma_eta: PsdMatrix::zeros(1),
    });
    let sim_cfg = SimConfig {
        horizon: 100_000,
        burn_in: 1_000,
        seed: 7,
        record_joint: false,
    };
    c.bench_function("rollout 1e5 steps scalar", |b| {
        b.iter(|| {
            black_box(
                rollout(&plant, &cost, &controller, &sim_cfg, &Tolerance::default()).unwrap(),
            )
        })
    });
}

criterion_group!(benches, bench_solve, bench_rollout);
criterion_main!(benches);
