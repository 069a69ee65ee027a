//! Two-view geometry: cameras, warping, ground-truth overlap boxes, box
//! metrics and epipolar match scoring. Everything here runs in f64.

mod boxes;
mod camera;
mod epipolar;
pub mod interchange;
mod overlap;
mod warp;

pub use boxes::{giou, iou, overlap_scale_ratio, OverlapBox};
pub use camera::{CameraFrame, CameraIntrinsics, DepthMap, RelativePose};
pub use epipolar::{
    essential_from_pose, evaluate_matches, symmetric_epipolar_distance, Match, MatchMetrics,
    EPIPOLAR_THRESHOLD,
};
pub use interchange::{CameraRecord, PairGeometry, PAIR_GEOMETRY_VERSION};
pub use overlap::{compute_overlap_gt, GtOverlap, OverlapParams};
pub use warp::{warp_pixel, Warp};
