use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use recnorm::estimators::{recursive_normalize, tivis_estimate};
use recnorm::uncertainty::quasi_hessian_covariance;
use recnorm_bench::{banana_pool, chib_pool};

fn bench_recursive(c: &mut Criterion) {
    let mut group = c.benchmark_group("recursive_normalize");
    for n in [1250usize, 12500] {
        let w = banana_pool(n, 1);
        group.throughput(Throughput::Elements(n as u64));
        group.bench_with_input(BenchmarkId::new("banana", n), &w, |b, w| {
            b.iter(|| recursive_normalize(w, 1e-10, 10_000).unwrap())
        });
    }
    let w = chib_pool(200, 1);
    group.bench_function("chib_partial_data", |b| {
        b.iter(|| recursive_normalize(&w, 1e-10, 10_000).unwrap())
    });
    group.finish();
}

fn bench_tivis(c: &mut Criterion) {
    let w = banana_pool(1250, 2);
    let z = recursive_normalize(&w, 1e-10, 10_000).unwrap();
    c.bench_function("tivis_201", |b| {
        b.iter(|| tivis_estimate(&w, &z.log_z, 201, 1e-10, 1000).unwrap())
    });
}

fn bench_hessian(c: &mut Criterion) {
    let w = banana_pool(12500, 3);
    let z = recursive_normalize(&w, 1e-10, 10_000).unwrap();
    c.bench_function("quasi_hessian_12500", |b| {
        b.iter(|| quasi_hessian_covariance(&w, &z).unwrap())
    });
}

criterion_group!(benches, bench_recursive, bench_tivis, bench_hessian);
criterion_main!(benches);
