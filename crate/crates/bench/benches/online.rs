use catsketch::online::{run_online, OnlineConfig};
use catsketch::sketch::solve_sketch;
use catsketch::subspace::sgd_step;
use catsketch::{InnerMethod, InnerSolverConfig, SketchVec};
use catsketch_bench::fixture;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use std::hint::black_box;

fn entry_derivs(c: &mut Criterion) {
    let f = fixture(5, 2, 1);
    let xs: Vec<f64> = (0..64).map(|k| -6.0 + 12.0 * k as f64 / 63.0).collect();
    c.bench_function("entry_derivs/probit", |b| {
        b.iter(|| {
            for &x in &xs {
                black_box(f.model.entry_derivs(3.0, black_box(x)).unwrap());
            }
        })
    });
}

fn sketch_solve(c: &mut Criterion) {
    let mut group = c.benchmark_group("sketch_solve");
    for method in [InnerMethod::Newton, InnerMethod::Gd] {
        let cfg = InnerSolverConfig { method, ..Default::default() };
        for dim in [50, 200, 800] {
            let f = fixture(dim, 8, 1);
            let zero = SketchVec::zeros(8);
            group.throughput(Throughput::Elements(dim as u64));
            group.bench_with_input(BenchmarkId::new(format!("{method:?}"), dim), &f, |b, f| {
                b.iter(|| solve_sketch(&f.model, &f.stream.data[0], &f.u, &cfg, &zero).unwrap())
            });
        }
    }
    group.finish();
}

fn subspace_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("sgd_step");
    for rank in [4, 8, 16, 32] {
        let f = fixture(400, rank, 1);
        let psi = SketchVec::from_element(rank, 0.3);
        group.bench_with_input(BenchmarkId::from_parameter(rank), &f, |b, f| {
            b.iter(|| sgd_step(&f.u, &f.stream.data[0], &psi, 10, 0.1, 0.01, &f.model).unwrap())
        });
    }
    group.finish();
}

fn online_pass(c: &mut Criterion) {
    let f = fixture(25, 8, 500);
    let cfg = OnlineConfig { check_smoothness: false, ..Default::default() };
    let mut group = c.benchmark_group("online");
    group.sample_size(10);
    group.throughput(Throughput::Elements(f.stream.len() as u64));
    group.bench_function("pass/d25_r8_t500", |b| b.iter(|| run_online(&f.model, &f.stream, &cfg).unwrap()));
    group.finish();
}

criterion_group!(benches, entry_derivs, sketch_solve, subspace_step, online_pass);
criterion_main!(benches);
