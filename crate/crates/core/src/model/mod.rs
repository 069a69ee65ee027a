//! The overlap estimation network: strided CNN backbone, multi-scale kernel
//! features, self/cross linear-attention encoder, single-query decoder,
//! weighted-sum centerness head and offset regression head.

mod config;
mod layers;
mod network;
mod params;
mod prediction;

pub use config::ModelConfig;
pub use network::{cell_mask, Centerness, FeatureStack, Graph, Oetr, PredictionVars};
pub use params::{
    read_manifest, save_checkpoint, CheckpointManifest, ManifestEntry, ParamId, ParamStore,
    CHECKPOINT_FORMAT, MODEL_VERSION,
};
pub use prediction::{assemble_box, clamp_box, AssembledBox, OverlapPrediction};

#[cfg(test)]
mod tests;
