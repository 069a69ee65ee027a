use nalgebra::Point2;

use super::camera::{CameraIntrinsics, RelativePose};
use crate::error::{invalid_input, Result};

/// Result of carrying a pixel from one view into another.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Warp {
    /// Lands inside the target image at `pixel`, at `depth` along the target
    /// camera's optical axis.
    Visible { pixel: Point2<f64>, depth: f64 },
    /// Behind the target camera or outside its image.
    OutOfView,
}

impl Warp {
    pub fn pixel(&self) -> Option<Point2<f64>> {
        match self {
            Warp::Visible { pixel, .. } => Some(*pixel),
            Warp::OutOfView => None,
        }
    }
}

/// Back-projects `p` at `depth` through `ka`, moves it by `pose` and projects
/// it through `kb`.
pub fn warp_pixel(
    p: Point2<f64>,
    depth: f64,
    ka: &CameraIntrinsics,
    kb: &CameraIntrinsics,
    pose: &RelativePose,
) -> Result<Warp> {
    if !(p.x.is_finite() && p.y.is_finite() && depth.is_finite()) {
        return Err(invalid_input("non-finite pixel or depth"));
    }
    if depth <= 0.0 {
        return Err(invalid_input(format!("depth must be positive, got {depth}")));
    }
    if !ka.contains(p) {
        return Err(invalid_input(format!(
            "pixel ({}, {}) outside the {}x{} source image",
            p.x, p.y, ka.width, ka.height
        )));
    }
    Ok(warp_unchecked(p, depth, ka, kb, pose))
}

pub(crate) fn warp_unchecked(
    p: Point2<f64>,
    depth: f64,
    ka: &CameraIntrinsics,
    kb: &CameraIntrinsics,
    pose: &RelativePose,
) -> Warp {
    let x = pose.apply(&ka.back_project(p, depth));
    if x.z <= 0.0 {
        return Warp::OutOfView;
    }
    let q = kb.project(&x);
    if kb.contains(q) {
        Warp::Visible { pixel: q, depth: x.z }
    } else {
        Warp::OutOfView
    }
}
