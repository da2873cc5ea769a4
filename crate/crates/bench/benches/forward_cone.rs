use criterion::{criterion_group, criterion_main, Criterion};

use conetomo::projector::forward;
use conetomo_bench::{circle, phantom, N};

fn bench(c: &mut Criterion) {
    let ph = phantom();
    let vol = ph.voxelize(N, 1.0, 1).unwrap();
    let acq = circle();
    let mut g = c.benchmark_group("forward_cone");
    g.sample_size(10);
    g.bench_function("analytic", |b| b.iter(|| forward(&ph, &acq, None).unwrap()));
    g.bench_function("voxel", |b| b.iter(|| forward(&vol, &acq, None).unwrap()));
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
