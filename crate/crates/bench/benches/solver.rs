use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rfac_bench::{fixture, THETA};
use rfac_core::SolverOptions;

fn extremal_pair(c: &mut Criterion) {
    let mut group = c.benchmark_group("extremal_pair");
    group.sample_size(10);
    for (dim, n) in [(1, 16), (1, 64), (2, 8), (2, 16)] {
        let f = fixture(dim, n);
        group.bench_function(BenchmarkId::new(format!("d{dim}"), n), |b| {
            b.iter(|| f.lab.pair(&f.field, THETA).unwrap())
        });
    }
    group.finish();
}

/// Flow limits alone, without the d = 1 chain search.
fn flow_only(c: &mut Criterion) {
    let f = fixture(1, 64);
    let opts = SolverOptions {
        chain_levels: 0,
        ..f.lab.solver
    };
    let solver = rfac_core::Solver::new(&f.field, &f.lab.potential, THETA, opts).unwrap();
    let mut group = c.benchmark_group("flow_only");
    group.sample_size(10);
    group.bench_function("d1/64", |b| b.iter(|| solver.extremal_pair(&f.grid).unwrap()));
    group.finish();
}

fn multistart(c: &mut Criterion) {
    let mut group = c.benchmark_group("multistart");
    group.sample_size(10);
    for (dim, n) in [(1, 16), (2, 8)] {
        let f = fixture(dim, n);
        let solver = f.lab.solver(&f.field, THETA).unwrap();
        group.bench_function(BenchmarkId::new(format!("d{dim}"), n), |b| {
            b.iter(|| solver.minimize_multistart(&f.grid).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, extremal_pair, flow_only, multistart);
criterion_main!(benches);
