use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use oetr::loss::LossWeights;
use oetr::numerics::{conv2d, linear_attention, reference_attention};
use oetr::pipeline::resize_pad;
use oetr::synth::{pad_batch, predict_sample, sample_gradients};
use oetr::Tensor;
use oetr_bench::{attention_inputs, model, sample, tensor};

fn attention(c: &mut Criterion) {
    let mut group = c.benchmark_group("attention");
    for n in [64, 256, 1024] {
        let [q, k, v] = attention_inputs(n, 32);
        group.bench_with_input(BenchmarkId::new("linear", n), &n, |b, _| {
            b.iter(|| linear_attention(&q, &k, &v, None).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("reference", n), &n, |b, _| {
            b.iter(|| reference_attention(&q, &k, &v, None).unwrap())
        });
    }
    group.finish();
}

fn convolution(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv2d");
    let x = tensor(&[16, 64, 64], 4);
    let w3 = tensor(&[32, 16, 3, 3], 5);
    group.bench_function("3x3 stride 2, 16->32 at 64x64", |b| b.iter(|| conv2d(&x, &w3, 2, 1).unwrap()));
    let f = tensor(&[128, 8, 8], 6);
    let w16 = tensor(&[32, 128, 16, 16], 7);
    group.bench_function("16x16 stride 2, 128->32 at 8x8", |b| b.iter(|| conv2d(&f, &w16, 2, 7).unwrap()));
    group.finish();
}

fn network(c: &mut Criterion) {
    let mut group = c.benchmark_group("model");
    let m = model();
    let s = sample(64);
    group.bench_function("predict 64x64 pair", |b| b.iter(|| predict_sample(&m, &s).unwrap()));
    let padded = pad_batch::<f32>(std::slice::from_ref(&s), 32).unwrap();
    let w = LossWeights::default();
    group.bench_function("loss and gradients 64x64 pair", |b| {
        b.iter(|| sample_gradients(&m, &padded[0], &s, &w).unwrap())
    });
    group.finish();
}

fn pipeline(c: &mut Criterion) {
    let img = tensor(&[3, 600, 800], 8).cast::<f64>();
    let img = Tensor::new(img.shape().to_vec(), img.data().iter().map(|v| v.abs()).collect()).unwrap();
    c.bench_function("resize_pad 800x600 to 1216", |b| b.iter(|| resize_pad(&img, 1200, 32).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10).measurement_time(Duration::from_secs(3)).warm_up_time(Duration::from_secs(1));
    targets = attention, convolution, network, pipeline
}
criterion_main!(benches);
