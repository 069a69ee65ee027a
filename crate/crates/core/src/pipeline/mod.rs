//! Preprocessing around the network: resize and pad, overlap inference,
//! crop-and-align of the overlap regions, and mapping matches found on the
//! aligned crops back to the original images.

mod image;
mod matches;
mod stages;
mod transform;

pub use image::{decode_pnm, encode_pnm, read_image, resample, to_rgb, write_image};
pub use matches::{warp_back, Keypoint, MatchRecord};
pub use stages::{
    crop_and_align, estimate_overlap, resize_pad, AlignedPair, ImageOverlap, OverlapEstimate, Resized,
    DEFAULT_TARGET_LONG_SIDE,
};
pub use transform::{ImageTransform, PairTransforms, PIPELINE_SCHEMA_VERSION};
