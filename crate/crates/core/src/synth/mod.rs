//! Synthetic crop pairs with exact overlap targets, and the toy training loop.

mod cameras;
mod matching;
mod pair;
mod polygon;
mod texture;
mod train;

#[cfg(test)]
mod tests;

pub use cameras::{planar_cameras, PlanarScene};
pub use matching::{evaluate_synthetic_matching, simulate_matching, MatchSummary, SynthMatchReport};
pub use pair::{generate_pair, render_pair, Crop, CropPair, PairTargets, SynthConfig, TrainSample};
pub use texture::Texture;
pub use train::{
    evaluate_pairs, pad_batch, predict_sample, sample_gradients, smoothed_loss, train_toy, AdamW,
    EvalRecord, EvalSummary, LogRecord, PaddedPair, TrainConfig, TrainOutcome, HELDOUT_OFFSET,
};
