use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use kamal_core::amalgam::{train_autoencoder, FitHyper};
use kamal_core::kalearn::layerwise_stage;
use kamal_core::nets::build_network;
use kamal_core::ops::{self, Activation, ConvGeom, Pool};
use kamal_core::{LayerSpec, Network, NetworkSpec, Rng, Tensor};

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = Rng::new(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.normal()).collect()).unwrap()
}

fn conv(c: &mut Criterion) {
    let x = random(&[32, 16, 16, 16], 1);
    let w = random(&[32, 16, 3, 3], 2);
    let b = random(&[32], 3);
    let geom = ConvGeom::new(3, 1, 1);
    c.bench_function("conv2d 32x16x16x16 -> 32ch k3", |g| {
        g.iter(|| ops::conv2d(black_box(&x), &w, &b, geom).unwrap())
    });
    let y = ops::conv2d(&x, &w, &b, geom).unwrap();
    c.bench_function("conv2d backward", |g| {
        g.iter(|| ops::conv2d_backward(black_box(&x), &w, &y, geom, true).unwrap())
    });
    let e = random(&[24, 32], 4);
    c.bench_function("conv1x1 32 -> 24 on 32x32x16x16", |g| {
        g.iter(|| ops::conv1x1(black_box(&y), &e).unwrap())
    });
}

fn forward(c: &mut Criterion) {
    let spec = NetworkSpec::conv_stack([3, 32, 32], &[16, 32, 48], &[128], 4).unwrap();
    let net: Network = build_network(&spec, &mut Rng::new(0)).unwrap();
    let x = random(&[64, 3, 32, 32], 5);
    c.bench_function("teacher scores, 64 images", |g| {
        g.iter(|| net.scores(black_box(&x), 64).unwrap())
    });
}

fn autoencoder(c: &mut Criterion) {
    let f = random(&[256, 32, 8, 8], 6);
    let hyper = FitHyper {
        epochs: 1,
        ..FitHyper::default()
    };
    c.bench_function("autoencoder epoch 32 -> 24, 256 maps", |g| {
        g.iter(|| train_autoencoder(black_box(&f), 24, &hyper).unwrap())
    });
}

fn stage(c: &mut Criterion) {
    let prev = LayerSpec::conv(3, 24, 3, 1, 1, Activation::Relu, Pool::Max { kernel: 2, stride: 2 });
    let layer = LayerSpec::conv(24, 48, 3, 1, 1, Activation::Relu, Pool::Max { kernel: 2, stride: 2 });
    let x = random(&[128, 24, 16, 16], 7);
    let y = random(&[128, 48, 8, 8], 8);
    let hyper = FitHyper {
        epochs: 1,
        ..FitHyper::default()
    };
    c.bench_function("layer-wise stage epoch with adapter, 128 maps", |g| {
        g.iter_batched(
            || (x.clone(), y.clone()),
            |(x, y)| layerwise_stage(2, &x, &y, &layer, Some(&prev), true, &hyper).unwrap(),
            BatchSize::LargeInput,
        )
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = conv, forward, autoencoder, stage
}
criterion_main!(benches);
