//! Camera model equivalent to an aligned crop pair: two pinhole cameras
//! looking straight down at the canvas plane, each framing one crop.

use nalgebra::Vector3;

use super::pair::{Crop, CropPair};
use crate::error::{OetrError, Result};
use crate::geometry::{CameraFrame, CameraIntrinsics, DepthMap, RelativePose};

/// Cameras and pose reproducing a crop pair as a planar scene.
#[derive(Debug, Clone)]
pub struct PlanarScene {
    pub frame_a: CameraFrame,
    pub frame_b: CameraFrame,
    /// Maps A-camera to B-camera coordinates.
    pub pose: RelativePose,
}

/// Camera at height `side` above the crop center, so a focal length of
/// `resolution` pixels makes the crop fill a `resolution`-pixel square image.
fn camera(crop: &Crop, resolution: usize) -> Result<(CameraFrame, Vector3<f64>)> {
    let r = resolution as f64;
    let k = CameraIntrinsics::new(r, r, r / 2.0, r / 2.0, resolution, resolution)?;
    let depth = DepthMap::constant(resolution, resolution, crop.side)?;
    let center = Vector3::new(crop.x + crop.side / 2.0, crop.y + crop.side / 2.0, -crop.side);
    Ok((CameraFrame::new(k, depth)?, center))
}

/// Planar scene of an unjittered crop pair rendered at `resolution` pixels.
pub fn planar_cameras(record: &CropPair, resolution: usize) -> Result<PlanarScene> {
    if *record != CropPair::aligned(record.a, record.b) {
        return Err(OetrError::InvalidInput("planar cameras need an unjittered crop pair".into()));
    }
    let (frame_a, ca) = camera(&record.a, resolution)?;
    let (frame_b, cb) = camera(&record.b, resolution)?;
    Ok(PlanarScene {
        frame_a,
        frame_b,
        pose: RelativePose::from_translation(ca - cb),
    })
}
