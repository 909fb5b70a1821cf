use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ssn_bench::problem;
use ssn_core::linalg::conjugate_gradient;
use ssn_core::sampling::{
    exact_block_partial_leverage_scores, fast_block_partial_leverage_scores, DEFAULT_SKETCH_FACTOR,
};
use ssn_core::{ssn_run, Budget, SamplingScheme, SsnConfig, Vector};

fn leverage(c: &mut Criterion) {
    let mut group = c.benchmark_group("leverage");
    group.sample_size(10);
    for n in [2_000, 20_000] {
        let p = problem(n, 20, 1);
        let f = p.hessian_factorization(&Vector::zeros(p.d()));
        group.bench_with_input(BenchmarkId::new("exact", n), &f, |b, f| {
            b.iter(|| exact_block_partial_leverage_scores(&f.a, &f.q).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("fast", n), &f, |b, f| {
            b.iter(|| fast_block_partial_leverage_scores(&f.a, &f.q, DEFAULT_SKETCH_FACTOR * p.d(), 7).unwrap())
        });
    }
    group.finish();
}

fn cg(c: &mut Criterion) {
    let p = problem(5_000, 50, 2);
    let h = p.hessian(&Vector::zeros(p.d()));
    let g = p.gradient(&Vector::zeros(p.d()));
    c.bench_function("cg_d50", |b| {
        b.iter(|| conjugate_gradient(|v| &h * v, black_box(&g), 1e-8, 500).unwrap())
    });
}

fn ssn_iterations(c: &mut Criterion) {
    let p = problem(10_000, 20, 3);
    let mut group = c.benchmark_group("ssn_5_iters");
    group.sample_size(10);
    for scheme in [SamplingScheme::Uniform, SamplingScheme::BlockNormSquares, SamplingScheme::BlockPartialLeverage] {
        let mut cfg = SsnConfig::new(scheme, Budget::Count(400));
        cfg.max_outer_iters = 5;
        group.bench_function(scheme.label(), |b| {
            b.iter(|| ssn_run(&p, &Vector::zeros(p.d()), &cfg, None).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, leverage, cg, ssn_iterations);
criterion_main!(benches);
