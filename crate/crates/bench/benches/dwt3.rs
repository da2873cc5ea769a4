use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use conetomo::regularize::{dwt3, idwt3};
use conetomo_bench::phantom;

fn bench(c: &mut Criterion) {
    let mut g = c.benchmark_group("dwt3");
    for n in [32usize, 64] {
        let v = phantom().scaled(n as f64 / 2.0).unwrap().voxelize(n, 1.0, 1).unwrap();
        let values = v.values().to_vec();
        g.bench_with_input(BenchmarkId::new("forward", n), &n, |b, &n| b.iter(|| dwt3(&values, n, 2).unwrap()));
        let coeffs = dwt3(&values, n, 2).unwrap();
        g.bench_with_input(BenchmarkId::new("inverse", n), &n, |b, &n| b.iter(|| idwt3(&coeffs, n, 2).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
