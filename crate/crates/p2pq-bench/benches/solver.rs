//! Solver benchmarks: the two R-matrix algorithms, the direct truncated
//! solve, and the drift-grid evaluation.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use p2pq::model::{ModelParams, WorkloadDist};
use p2pq::qbd::{
    brute_force_truncated, build_blocks, solve_equilibrium, solve_r, solve_r_fixed_point,
};
use p2pq::stability::{check_drift_default, LyapunovConfig};
use std::hint::black_box;

fn fig1_params(rho_c: f64) -> ModelParams {
    ModelParams::from_loads(rho_c, 10.0, 10.0, 1.0).unwrap()
}

fn bench_r_matrix(c: &mut Criterion) {
    let params = fig1_params(5.0);
    let mut group = c.benchmark_group("r_matrix");
    for m_s in [20u32, 40, 80] {
        let blocks = build_blocks(&params, m_s);
        group.bench_with_input(
            BenchmarkId::new("logarithmic_reduction", m_s),
            &blocks,
            |b, blocks| b.iter(|| solve_r(black_box(blocks), 1e-13, 200).unwrap()),
        );
        group.bench_with_input(
            BenchmarkId::new("fixed_point", m_s),
            &blocks,
            |b, blocks| b.iter(|| solve_r_fixed_point(black_box(blocks), 1e-13, 500_000).unwrap()),
        );
    }
    group.finish();
}

fn bench_equilibrium(c: &mut Criterion) {
    let params = fig1_params(5.0);
    let blocks = build_blocks(&params, 40);
    let r = solve_r(&blocks, 1e-13, 200).unwrap();
    c.bench_function("solve_equilibrium_ms40", |b| {
        b.iter(|| solve_equilibrium(black_box(&blocks), black_box(&r)).unwrap())
    });

    let mut group = c.benchmark_group("brute_force");
    group.sample_size(10);
    group.bench_function("ms40_depth400", |b| {
        b.iter(|| brute_force_truncated(black_box(&params), 40, 400).unwrap())
    });
    group.finish();
}

fn bench_drift_grid(c: &mut Criterion) {
    let params = fig1_params(5.0);
    let workload = WorkloadDist::deterministic(0.1).unwrap();
    let config = LyapunovConfig::with_defaults(&params, &workload).unwrap();
    let mut group = c.benchmark_group("drift");
    group.sample_size(20);
    group.bench_function("check_drift_default_grid", |b| {
        b.iter(|| check_drift_default(black_box(&config)))
    });
    group.finish();
}

criterion_group!(benches, bench_r_matrix, bench_equilibrium, bench_drift_grid);
criterion_main!(benches);
