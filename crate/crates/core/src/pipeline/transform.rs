use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, Result};
use crate::geometry::OverlapBox;
use crate::model::{clamp_box, AssembledBox};

/// Version of the transform, box and match JSON documents.
pub const PIPELINE_SCHEMA_VERSION: u32 = 1;

/// Map from original-image pixels to processed-image pixels:
/// resize by `resize`, shift by `pad`, then cut at `crop_origin` and scale
/// by `crop_ratio`.
///
/// `q = ((p * resize + pad) - crop_origin) * crop_ratio`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageTransform {
    pub resize: f64,
    /// `(left, top)` offset added after resizing.
    pub pad: [f64; 2],
    pub crop_origin: [f64; 2],
    pub crop_ratio: f64,
    /// `(width, height)` of the original image.
    pub input_size: [usize; 2],
    /// `(width, height)` of the processed image.
    pub output_size: [usize; 2],
}

impl ImageTransform {
    pub fn identity(width: usize, height: usize) -> Self {
        Self {
            resize: 1.0,
            pad: [0.0; 2],
            crop_origin: [0.0; 2],
            crop_ratio: 1.0,
            input_size: [width, height],
            output_size: [width, height],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.pad.iter().chain(&self.crop_origin).all(|v| v.is_finite());
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !(positive(self.resize) && positive(self.crop_ratio) && finite) {
            return Err(invalid_input(format!("non-invertible transform {self:?}")));
        }
        Ok(())
    }

    pub fn forward(&self, p: [f64; 2]) -> [f64; 2] {
        [0, 1].map(|k| (p[k] * self.resize + self.pad[k] - self.crop_origin[k]) * self.crop_ratio)
    }

    pub fn inverse(&self, q: [f64; 2]) -> [f64; 2] {
        [0, 1].map(|k| (q[k] / self.crop_ratio + self.crop_origin[k] - self.pad[k]) / self.resize)
    }

    /// Total scale from original to processed pixels.
    pub fn scale(&self) -> f64 {
        self.resize * self.crop_ratio
    }

    /// True when `q` lies in the processed image.
    pub fn in_output(&self, q: [f64; 2]) -> bool {
        let [w, h] = self.output_size;
        (0.0..=w as f64).contains(&q[0]) && (0.0..=h as f64).contains(&q[1])
    }

    /// Processed-image box mapped back to original pixels, clamped to the
    /// original image with sides of at least one pixel.
    pub fn box_to_input(&self, b: &OverlapBox) -> AssembledBox {
        let [x0, y0] = self.inverse([b.x_min, b.y_min]);
        let [x1, y1] = self.inverse([b.x_max, b.y_max]);
        let [w, h] = self.input_size;
        clamp_box([x0, y0, x1, y1], w as f64, h as f64)
    }

    pub fn box_to_output(&self, b: &OverlapBox) -> Result<OverlapBox> {
        let [x0, y0] = self.forward([b.x_min, b.y_min]);
        let [x1, y1] = self.forward([b.x_max, b.y_max]);
        OverlapBox::new(x0, y0, x1, y1)
    }
}

/// Transforms of both images of a pair, as exchanged between CLI steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairTransforms {
    pub version: u32,
    pub a: ImageTransform,
    pub b: ImageTransform,
}

impl PairTransforms {
    pub fn new(a: ImageTransform, b: ImageTransform) -> Self {
        Self {
            version: PIPELINE_SCHEMA_VERSION,
            a,
            b,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let t: Self = serde_json::from_str(text)?;
        if t.version != PIPELINE_SCHEMA_VERSION {
            return Err(crate::OetrError::Format(format!(
                "transform schema version {} (expected {PIPELINE_SCHEMA_VERSION})",
                t.version
            )));
        }
        t.a.validate()?;
        t.b.validate()?;
        Ok(t)
    }
}
