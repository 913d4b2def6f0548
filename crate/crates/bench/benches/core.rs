use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use maso_bench::{inputs, mnist_cnn, small_cnn, toy};
use maso_core::conv::{build_conv_matrix, ConvFilters, Padding};
use maso_core::partition::{estimate_partition, Grid2DSpec, Sampler, Scope};
use maso_core::{rng, Shape3};

fn forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward");
    for (name, net) in [("toy", toy()), ("cnn8", small_cnn()), ("cnn28", mnist_cnn())] {
        let x = inputs(&net, 1, 1).remove(0);
        group.bench_with_input(BenchmarkId::from_parameter(name), &x, |b, x| b.iter(|| net.forward(black_box(x)).unwrap()));
    }
    group.finish();
}

fn decompose(c: &mut Criterion) {
    let mut group = c.benchmark_group("decompose");
    for (name, net) in [("toy", toy()), ("cnn8", small_cnn()), ("cnn28", mnist_cnn())] {
        let x = inputs(&net, 1, 2).remove(0);
        let t = net.forward(&x).unwrap();
        group.bench_function(name, |b| b.iter(|| net.decompose(black_box(&t), None).unwrap()));
    }
    group.finish();
}

fn conv_build(c: &mut Criterion) {
    let shape = Shape3::new(3, 32, 32).unwrap();
    let mut g = rng::seeded(3);
    let filters = ConvFilters::new(16, 3, 3, 3, rng::normal_vec(&mut g, 16 * 3 * 9, 0.1)).unwrap();
    c.bench_function("conv_build/3x32x32_16x3x3", |b| {
        b.iter(|| build_conv_matrix(black_box(&filters), shape, Padding::Same, (1, 1)).unwrap())
    });
}

fn partition_grid(c: &mut Criterion) {
    let net = toy();
    let mut group = c.benchmark_group("partition_grid");
    group.sample_size(10);
    for n in [128usize, 512] {
        let s = Sampler::Grid(Grid2DSpec::square(-3.0, 3.0, n));
        group.bench_with_input(BenchmarkId::from_parameter(n), &s, |b, s| {
            b.iter(|| estimate_partition(&net, s, Scope::Global(2)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, forward, decompose, conv_build, partition_grid);
criterion_main!(benches);
