//! JSON form of camera geometry.
//!
//! Each camera carries `intrinsics: [fx, fy, cx, cy, width, height]` and a
//! world-to-camera extrinsic (`rotation`, 9 row-major floats; `translation`,
//! 3 floats) with `X_cam = R X_world + t`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::camera::{CameraIntrinsics, RelativePose};
use crate::error::{invalid_input, OetrError, Result};

pub const PAIR_GEOMETRY_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub intrinsics: [f64; 6],
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl CameraRecord {
    pub fn new(k: &CameraIntrinsics, world_to_cam: &RelativePose) -> Self {
        let r = world_to_cam.rotation();
        let t = world_to_cam.translation();
        Self {
            intrinsics: [k.fx, k.fy, k.cx, k.cy, k.width as f64, k.height as f64],
            rotation: [r[(0, 0)], r[(0, 1)], r[(0, 2)], r[(1, 0)], r[(1, 1)], r[(1, 2)], r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            translation: [t.x, t.y, t.z],
        }
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        let [fx, fy, cx, cy, w, h] = self.intrinsics;
        if w.fract() != 0.0 || h.fract() != 0.0 || w < 1.0 || h < 1.0 {
            return Err(invalid_input(format!("image size {w}x{h} is not a positive integer")));
        }
        CameraIntrinsics::new(fx, fy, cx, cy, w as usize, h as usize)
    }

    pub fn extrinsic(&self) -> Result<RelativePose> {
        RelativePose::new(
            Matrix3::from_row_slice(&self.rotation),
            Vector3::from_column_slice(&self.translation),
        )
    }
}

/// Two cameras in a shared world frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairGeometry {
    pub version: u32,
    pub camera_a: CameraRecord,
    pub camera_b: CameraRecord,
}

impl PairGeometry {
    /// Places A at the world origin and B at `pose` relative to A.
    pub fn from_relative(ka: &CameraIntrinsics, kb: &CameraIntrinsics, pose: &RelativePose) -> Self {
        Self {
            version: PAIR_GEOMETRY_VERSION,
            camera_a: CameraRecord::new(ka, &RelativePose::identity()),
            camera_b: CameraRecord::new(kb, pose),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let g: Self = serde_json::from_str(text)?;
        if g.version != PAIR_GEOMETRY_VERSION {
            return Err(OetrError::Format(format!(
                "pair geometry version {} (expected {PAIR_GEOMETRY_VERSION})",
                g.version
            )));
        }
        Ok(g)
    }

    /// Pose taking A-camera coordinates to B-camera coordinates.
    pub fn relative_pose(&self) -> Result<RelativePose> {
        let a = self.camera_a.extrinsic()?;
        let b = self.camera_b.extrinsic()?;
        Ok(a.inverse().then(&b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_and_relative_pose() {
        let ka = CameraIntrinsics::new(100.0, 90.0, 50.0, 40.0, 100, 80).unwrap();
        let kb = CameraIntrinsics::new(120.0, 120.0, 60.0, 45.0, 120, 90).unwrap();
        let pose = RelativePose::from_axis_angle(Vector3::new(0.0, 1.0, 0.2), 0.3, Vector3::new(0.5, 0.0, -0.1)).unwrap();
        let g = PairGeometry::from_relative(&ka, &kb, &pose);
        let text = serde_json::to_string(&g).unwrap();
        let back = PairGeometry::from_json(&text).unwrap();
        assert_eq!(back.camera_a.intrinsics().unwrap(), ka);
        assert_eq!(back.camera_b.intrinsics().unwrap(), kb);
        let rel = back.relative_pose().unwrap();
        assert!((rel.rotation() - pose.rotation()).abs().max() < 1e-12);
        assert!((rel.translation() - pose.translation()).norm() < 1e-12);
    }

    #[test]
    fn world_frame_is_factored_out() {
        let k = CameraIntrinsics::new(100.0, 100.0, 50.0, 40.0, 100, 80).unwrap();
        let world_a = RelativePose::from_axis_angle(Vector3::new(1.0, 0.0, 0.0), 0.2, Vector3::new(1.0, 2.0, 3.0)).unwrap();
        let rel = RelativePose::from_translation(Vector3::new(0.1, 0.0, 0.0));
        let world_b = world_a.then(&rel);
        let g = PairGeometry {
            version: 1,
            camera_a: CameraRecord::new(&k, &world_a),
            camera_b: CameraRecord::new(&k, &world_b),
        };
        let got = g.relative_pose().unwrap();
        assert!((got.translation() - rel.translation()).norm() < 1e-12);
    }

    #[test]
    fn bad_records_are_rejected() {
        let mut text = serde_json::to_string(&PairGeometry::from_relative(
            &CameraIntrinsics::new(10.0, 10.0, 5.0, 5.0, 10, 10).unwrap(),
            &CameraIntrinsics::new(10.0, 10.0, 5.0, 5.0, 10, 10).unwrap(),
            &RelativePose::identity(),
        ))
        .unwrap();
        text = text.replacen("\"version\":1", "\"version\":9", 1);
        assert!(PairGeometry::from_json(&text).is_err());
        let rec = CameraRecord {
            intrinsics: [10.0, 10.0, 5.0, 5.0, 10.5, 10.0],
            rotation: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            translation: [0.0; 3],
        };
        assert!(rec.intrinsics().is_err());
    }
}
