use serde::{Deserialize, Serialize};

use crate::error::{OetrError, Result};

/// Network hyperparameters. Every field is echoed into checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Output channels of the stride-2 backbone stages (4 stages reach stride 16).
    pub backbone_channels: Vec<usize>,
    pub d_model: usize,
    /// Multi-scale kernel sizes, strictly increasing and even.
    pub msf_kernels: Vec<usize>,
    /// Output channels per multi-scale branch; sums to `d_model`.
    pub msf_split: Vec<usize>,
    pub encoder_iterations: usize,
    /// One weight block reused by every encoder iteration when true.
    pub share_encoder_weights: bool,
    pub ffn_hidden: usize,
    pub attention_heads: usize,
    pub decoder_layers: usize,
    /// Hidden channels of the 3x3 convolutions before the 1x1 logit layer.
    pub centerness_channels: Vec<usize>,
    pub box_hidden: usize,
    /// Divide query/feature similarities by `sqrt(d_model)`.
    pub scale_similarity: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone_channels: vec![16, 32, 64, 128],
            d_model: 128,
            msf_kernels: vec![4, 8, 16],
            msf_split: vec![64, 32, 32],
            encoder_iterations: 4,
            share_encoder_weights: false,
            ffn_hidden: 256,
            attention_heads: 1,
            decoder_layers: 1,
            centerness_channels: vec![64, 32],
            box_hidden: 128,
            scale_similarity: true,
        }
    }
}

impl ModelConfig {
    /// Small network for gradient checks and fast tests.
    pub fn tiny() -> Self {
        Self {
            backbone_channels: vec![4, 4, 8, 8],
            d_model: 8,
            msf_kernels: vec![4, 8, 16],
            msf_split: vec![4, 2, 2],
            encoder_iterations: 2,
            share_encoder_weights: false,
            ffn_hidden: 8,
            attention_heads: 1,
            decoder_layers: 1,
            centerness_channels: vec![4, 4],
            box_hidden: 8,
            scale_similarity: true,
        }
    }

    /// Total downsampling from image to attention grid.
    pub fn stride(&self) -> usize {
        (1 << self.backbone_channels.len()) * 2
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(OetrError::InvalidConfig(m));
        if self.backbone_channels.len() != 4 || self.backbone_channels.contains(&0) {
            return bad(format!(
                "backbone needs 4 non-empty stride-2 stages, got {:?}",
                self.backbone_channels
            ));
        }
        if self.d_model == 0 || !self.d_model.is_multiple_of(4) {
            return bad(format!("d_model {} must be a positive multiple of 4", self.d_model));
        }
        if self.msf_kernels.is_empty()
            || self.msf_kernels.windows(2).any(|w| w[0] >= w[1])
            || self.msf_kernels.iter().any(|&k| k < 2 || !k.is_multiple_of(2))
        {
            return bad(format!(
                "msf kernels must be even, >= 2 and strictly increasing, got {:?}",
                self.msf_kernels
            ));
        }
        if self.msf_split.len() != self.msf_kernels.len()
            || self.msf_split.contains(&0)
            || self.msf_split.iter().sum::<usize>() != self.d_model
        {
            return bad(format!(
                "msf split {:?} must give one positive width per kernel summing to d_model {}",
                self.msf_split, self.d_model
            ));
        }
        if self.encoder_iterations == 0 {
            return bad("encoder needs at least one iteration".into());
        }
        if self.attention_heads != 1 {
            return bad(format!(
                "only single-head attention is implemented, got {} heads",
                self.attention_heads
            ));
        }
        if self.decoder_layers == 0 {
            return bad("decoder needs at least one layer".into());
        }
        if self.ffn_hidden == 0 || self.box_hidden == 0 || self.centerness_channels.contains(&0) {
            return bad("hidden widths must be positive".into());
        }
        Ok(())
    }
}
