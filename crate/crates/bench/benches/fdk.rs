use criterion::{criterion_group, criterion_main, Criterion};

use conetomo::inversion::{fdk, GridSpec};
use conetomo::projector::forward;
use conetomo::{InverseKind, InverseOperator};
use conetomo_bench::{circle, phantom, N};

fn bench(c: &mut Criterion) {
    let p = forward(&phantom(), &circle(), None).unwrap();
    let op = InverseOperator::new(InverseKind::Fdk, GridSpec { n: N, voxel_size: 1.0 });
    let mut g = c.benchmark_group("fdk");
    g.sample_size(10);
    g.bench_function("circle_120", |b| b.iter(|| fdk(&p, &op).unwrap()));
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
