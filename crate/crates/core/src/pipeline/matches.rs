use serde::{Deserialize, Serialize};

use super::transform::{ImageTransform, PIPELINE_SCHEMA_VERSION};
use crate::error::{OetrError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub score: f64,
    /// Set by [`warp_back`] when the point lay outside the processed image.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub outside: bool,
}

impl Keypoint {
    pub fn new(x: f64, y: f64, score: f64) -> Self {
        Self {
            x,
            y,
            score,
            outside: false,
        }
    }
}

/// Keypoints of both images and the index pairs matching them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub version: u32,
    /// `(width, height)` the coordinates refer to.
    pub image_size_a: [usize; 2],
    pub image_size_b: [usize; 2],
    pub keypoints_a: Vec<Keypoint>,
    pub keypoints_b: Vec<Keypoint>,
    /// `(index into keypoints_a, index into keypoints_b)`.
    pub matches: Vec<[usize; 2]>,
    /// Descriptor payload carried through untouched.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub descriptors: Option<serde_json::Value>,
}

fn within(k: &Keypoint, size: [usize; 2]) -> bool {
    (0.0..=size[0] as f64).contains(&k.x) && (0.0..=size[1] as f64).contains(&k.y)
}

impl MatchRecord {
    pub fn empty(image_size_a: [usize; 2], image_size_b: [usize; 2]) -> Self {
        Self {
            version: PIPELINE_SCHEMA_VERSION,
            image_size_a,
            image_size_b,
            keypoints_a: Vec::new(),
            keypoints_b: Vec::new(),
            matches: Vec::new(),
            descriptors: None,
        }
    }

    /// Checks the version, match indices and that every keypoint not
    /// flagged as outside lies within its image.
    pub fn validate(&self) -> Result<()> {
        if self.version != PIPELINE_SCHEMA_VERSION {
            return Err(OetrError::Format(format!(
                "match schema version {} (expected {PIPELINE_SCHEMA_VERSION})",
                self.version
            )));
        }
        for (i, &[a, b]) in self.matches.iter().enumerate() {
            if a >= self.keypoints_a.len() || b >= self.keypoints_b.len() {
                return Err(OetrError::Format(format!("match {i} refers to missing keypoint ({a}, {b})")));
            }
        }
        for (kps, size, name) in [
            (&self.keypoints_a, self.image_size_a, "A"),
            (&self.keypoints_b, self.image_size_b, "B"),
        ] {
            if let Some(i) = kps.iter().position(|k| !k.outside && !within(k, size)) {
                return Err(OetrError::Format(format!("keypoint {i} of image {name} lies outside {size:?}")));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(text)?;
        r.validate()?;
        Ok(r)
    }
}

fn warp_points(points: &[Keypoint], t: &ImageTransform) -> Vec<Keypoint> {
    points
        .iter()
        .map(|k| {
            let outside = k.outside || !t.in_output([k.x, k.y]);
            let [x, y] = t.inverse([k.x, k.y]);
            Keypoint { x, y, score: k.score, outside }
        })
        .collect()
}

/// Maps keypoints found on processed images back to the original images.
/// Match indices are kept; points outside the processed image are flagged,
/// not dropped.
pub fn warp_back(record: &MatchRecord, ta: &ImageTransform, tb: &ImageTransform) -> Result<MatchRecord> {
    ta.validate()?;
    tb.validate()?;
    if record.version != PIPELINE_SCHEMA_VERSION {
        return Err(OetrError::Format(format!("match schema version {}", record.version)));
    }
    Ok(MatchRecord {
        version: PIPELINE_SCHEMA_VERSION,
        image_size_a: ta.input_size,
        image_size_b: tb.input_size,
        keypoints_a: warp_points(&record.keypoints_a, ta),
        keypoints_b: warp_points(&record.keypoints_b, tb),
        matches: record.matches.clone(),
        descriptors: record.descriptors.clone(),
    })
}
