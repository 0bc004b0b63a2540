//! Adaptive threshold sweep and pairwise mergeability, serial against the
//! rayon-backed parallel execution. Without the `parallel` feature both
//! variants run on the calling thread.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use marg::imgio::{make_synthetic, Image, SceneKind, SceneSpec};
use marg::merge::mergeability_with;
use marg::{adaptive_thresholds, segment, Execution, GrowConfig, MergeConfig, SweepSpec, ThresholdPair};

fn scene(size: usize) -> Image {
    let spec = SceneSpec {
        kind: SceneKind::DiagonalStripe {
            height: size,
            width: size,
            stripe_width: size / 8,
            fg: [225, 220, 205],
            bg_left: [20, 60, 100],
            bg_right: [140, 170, 210],
        },
        noise: 5,
        seed: 1,
    };
    make_synthetic(&spec).expect("valid scene").0
}

fn sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("adaptive_sweep");
    group.sample_size(10);
    let cfg = GrowConfig::default();
    let spec = SweepSpec::default();
    for size in [64usize, 128] {
        let img = scene(size);
        for (name, exec) in [("serial", Execution::Serial), ("parallel", Execution::Parallel)] {
            group.bench_with_input(BenchmarkId::new(name, size), &img, |b, img| {
                b.iter(|| adaptive_thresholds(black_box(img), &cfg, &spec, exec).unwrap())
            });
        }
    }
    group.finish();
}

fn merge_matrix(c: &mut Criterion) {
    let mut group = c.benchmark_group("mergeability");
    let img = scene(128);
    let cfg = GrowConfig {
        thresholds: ThresholdPair::new(6, 6),
        ..GrowConfig::default()
    };
    let rs = segment(&img, &cfg).unwrap();
    let mc = MergeConfig::default();
    for (name, exec) in [("serial", Execution::Serial), ("parallel", Execution::Parallel)] {
        group.bench_function(BenchmarkId::new(name, rs.len()), |b| {
            b.iter(|| mergeability_with(black_box(&rs), &mc, exec))
        });
    }
    group.finish();
}

criterion_group!(benches, sweep, merge_matrix);
criterion_main!(benches);
