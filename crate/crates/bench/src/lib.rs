//! Seeded inputs shared by the benchmarks.

use oetr::model::{ModelConfig, Oetr};
use oetr::synth::{generate_pair, SynthConfig, TrainSample};
use oetr::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform values in `[-1, 1)`.
pub fn tensor(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape")
}

/// Query, key and value matrices with `n` rows and `d` columns each.
pub fn attention_inputs(n: usize, d: usize) -> [Tensor<f32>; 3] {
    [tensor(&[n, d], 1), tensor(&[n, d], 2), tensor(&[n, d], 3)]
}

/// Default-size network with seeded weights.
pub fn model() -> Oetr<f32> {
    Oetr::new(ModelConfig::default(), 0).expect("default config")
}

/// Synthetic pair rendered at `side` pixels.
pub fn sample(side: usize) -> TrainSample {
    let cfg = SynthConfig {
        crop_size: side,
        ..SynthConfig::default()
    };
    generate_pair(&cfg, 0).expect("synthetic pair")
}
