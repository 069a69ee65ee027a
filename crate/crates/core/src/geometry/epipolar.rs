use nalgebra::{Matrix3, Point2, Vector3};

use super::camera::{CameraIntrinsics, RelativePose};
use crate::error::{invalid_input, OetrError, Result};

/// Default inlier threshold on the symmetric epipolar distance.
pub const EPIPOLAR_THRESHOLD: f64 = 5e-4;

/// `E = [t]x R`, scaled to unit Frobenius norm, so that `x_b^T E x_a = 0` for
/// normalized correspondences.
pub fn essential_from_pose(pose: &RelativePose) -> Result<Matrix3<f64>> {
    let t = pose.translation();
    let n = t.norm();
    if n.is_nan() || n <= f64::EPSILON {
        return Err(OetrError::DegeneratePose);
    }
    let tx = t.cross_matrix();
    let e = tx * pose.rotation();
    Ok(e / e.norm())
}

/// Sum of the squared distances from each point to the epipolar line induced
/// by the other, in normalized camera coordinates.
pub fn symmetric_epipolar_distance(e: &Matrix3<f64>, xa: Point2<f64>, xb: Point2<f64>) -> f64 {
    let a = Vector3::new(xa.x, xa.y, 1.0);
    let b = Vector3::new(xb.x, xb.y, 1.0);
    let ea = e * a;
    let etb = e.transpose() * b;
    let r = b.dot(&ea);
    r * r * (1.0 / (ea.x * ea.x + ea.y * ea.y) + 1.0 / (etb.x * etb.x + etb.y * etb.y))
}

/// A putative correspondence in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Match {
    pub a: [f64; 2],
    pub b: [f64; 2],
    #[serde(default = "yes")]
    pub valid: bool,
}

fn yes() -> bool {
    true
}

impl Match {
    pub fn new(a: [f64; 2], b: [f64; 2]) -> Self {
        Self { a, b, valid: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MatchMetrics {
    /// Inliers over valid matches.
    pub precision: f64,
    /// Inliers over the smaller keypoint count.
    pub matching_score: f64,
    pub inliers: usize,
    pub valid_matches: usize,
}

/// Scores matches against the ground-truth epipolar geometry. Matches flagged
/// invalid are ignored; empty sets score zero.
pub fn evaluate_matches(
    matches: &[Match],
    ka: &CameraIntrinsics,
    kb: &CameraIntrinsics,
    pose: &RelativePose,
    threshold: f64,
    keypoints_a: usize,
    keypoints_b: usize,
) -> Result<MatchMetrics> {
    if !(threshold.is_finite() && threshold > 0.0) {
        return Err(invalid_input(format!("bad epipolar threshold {threshold}")));
    }
    let e = essential_from_pose(pose)?;
    let mut inliers = 0;
    let mut valid = 0;
    for m in matches.iter().filter(|m| m.valid) {
        let (pa, pb) = (Point2::from(m.a), Point2::from(m.b));
        if !ka.contains(pa) || !kb.contains(pb) {
            return Err(invalid_input(format!("match {m:?} lies outside its image")));
        }
        valid += 1;
        let d = symmetric_epipolar_distance(&e, ka.normalize(pa), kb.normalize(pb));
        if d < threshold {
            inliers += 1;
        }
    }
    let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    Ok(MatchMetrics {
        precision: ratio(inliers, valid),
        matching_score: ratio(inliers, keypoints_a.min(keypoints_b)),
        inliers,
        valid_matches: valid,
    })
}
