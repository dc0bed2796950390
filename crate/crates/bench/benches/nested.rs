use criterion::{criterion_group, criterion_main, Criterion};
use rand_distr::{Distribution, StandardNormal};
use recnorm::nested::{mvee, nested_run, ns_evidence};
use recnorm::{rng_for, BananaModel, NestedConfig};

fn bench_nested_run(c: &mut Criterion) {
    let mut group = c.benchmark_group("nested");
    group.sample_size(10);
    group.bench_function("banana_125x1250", |b| {
        b.iter(|| {
            let run = nested_run(&BananaModel, &NestedConfig::new(125, 1250, 4)).unwrap();
            ns_evidence(&run)
        })
    });
    group.finish();
}

fn bench_mvee(c: &mut Criterion) {
    let mut rng = rng_for(5, "bench", 0);
    let pts: Vec<Vec<f64>> = (0..125)
        .map(|_| {
            let x: f64 = StandardNormal.sample(&mut rng);
            let y: f64 = StandardNormal.sample(&mut rng);
            vec![x, 0.3 * x + 0.5 * y]
        })
        .collect();
    c.bench_function("mvee_125", |b| b.iter(|| mvee(&pts, 1e-6).unwrap()));
}

criterion_group!(benches, bench_nested_run, bench_mvee);
criterion_main!(benches);
