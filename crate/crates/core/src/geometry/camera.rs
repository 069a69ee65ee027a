use nalgebra::{Matrix3, Point2, Vector3};

use crate::error::{invalid_input, Result};
use crate::numerics::{Real, Tensor};

/// Pinhole intrinsics in pixel units.
///
/// Pixel `(i, j)` covers `[i, i+1) x [j, j+1)`; its center is `(i + 0.5, j + 0.5)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(invalid_input(format!("bad focal lengths in {self:?}")));
        }
        if self.width == 0 || self.height == 0 {
            return Err(invalid_input("image size must be positive"));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy) {
            return Err(invalid_input(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Pixel to normalized camera coordinates `((u - cx)/fx, (v - cy)/fy)`.
    pub fn normalize(&self, p: Point2<f64>) -> Point2<f64> {
        Point2::new((p.x - self.cx) / self.fx, (p.y - self.cy) / self.fy)
    }

    pub fn back_project(&self, p: Point2<f64>, depth: f64) -> Vector3<f64> {
        let n = self.normalize(p);
        Vector3::new(n.x * depth, n.y * depth, depth)
    }

    pub fn project(&self, x: &Vector3<f64>) -> Point2<f64> {
        Point2::new(self.fx * x.x / x.z + self.cx, self.fy * x.y / x.z + self.cy)
    }

    pub fn contains(&self, p: Point2<f64>) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x < self.width as f64 && p.y < self.height as f64
    }
}

/// Rigid transform taking camera-A coordinates to camera-B coordinates:
/// `X_b = R X_a + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativePose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

const ROTATION_TOL: f64 = 1e-9;

impl RelativePose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(invalid_input("pose has non-finite entries"));
        }
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if ortho > ROTATION_TOL || (det - 1.0).abs() > ROTATION_TOL {
            return Err(invalid_input(format!(
                "rotation is not proper orthonormal (|R^T R - I| = {ortho:e}, det = {det})"
            )));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Rotation about a unit `axis` by `angle` radians (Rodrigues).
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Result<Self> {
        let rot = nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
        Self::new(*rot.matrix(), translation)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation
    }

    /// Maps camera-B coordinates back to camera-A coordinates.
    pub fn apply_inverse(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (x - self.translation)
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Composition `other ∘ self`: first `self`, then `other`.
    pub fn then(&self, other: &RelativePose) -> Self {
        Self {
            rotation: other.rotation * self.rotation,
            translation: other.rotation * self.translation + other.translation,
        }
    }
}

/// Per-pixel depth with a validity mask. A pixel is valid when its depth is
/// finite and strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height || values.is_empty() {
            return Err(invalid_input(format!(
                "depth map of {} values for {width}x{height}",
                values.len()
            )));
        }
        let valid = values.iter().map(|&d| d.is_finite() && d > 0.0).collect();
        Ok(Self {
            width,
            height,
            values,
            valid,
        })
    }

    pub fn constant(width: usize, height: usize, depth: f64) -> Result<Self> {
        Self::new(width, height, vec![depth; width * height])
    }

    /// Reads a `[H, W]` tensor.
    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Result<Self> {
        let (h, w) = t.dims2()?;
        Self::new(w, h, t.data().iter().map(|v| v.to_f64_lossy()).collect())
    }

    pub fn to_tensor(&self) -> Tensor<f64> {
        Tensor::new([self.height, self.width], self.values.clone()).expect("depth shape")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Depth at integer pixel `(x, y)` if valid.
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let i = y * self.width + x;
        self.valid[i].then(|| self.values[i])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// One view: intrinsics plus depth.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraFrame {
    pub intrinsics: CameraIntrinsics,
    pub depth: DepthMap,
}

impl CameraFrame {
    pub fn new(intrinsics: CameraIntrinsics, depth: DepthMap) -> Result<Self> {
        intrinsics.validate()?;
        if depth.width() != intrinsics.width || depth.height() != intrinsics.height {
            return Err(invalid_input(format!(
                "depth map {}x{} does not match image {}x{}",
                depth.width(),
                depth.height(),
                intrinsics.width,
                intrinsics.height
            )));
        }
        Ok(Self { intrinsics, depth })
    }
}
