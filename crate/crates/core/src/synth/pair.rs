use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::polygon::{apply, area, bounds, clip_to_rect, square_to_quad, Pt};
use super::texture::Texture;
use crate::error::{OetrError, Result};
use crate::geometry::OverlapBox;
use crate::loss::OverlapTarget;
use crate::numerics::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Side of the square texture canvas, in canvas units.
    pub canvas_size: f64,
    /// Side of every rendered image, in pixels.
    pub crop_size: usize,
    /// Range of the smaller crop's side on the canvas.
    pub crop_extent: [f64; 2],
    /// Accepted intersection-over-crop ratio, checked for both crops.
    pub overlap_range: [f64; 2],
    /// Range of the larger-to-smaller crop side ratio.
    pub scale_range: [f64; 2],
    /// Corner displacement of crop B as a fraction of its side.
    pub jitter: f64,
    pub texture_cell: f64,
    pub texture_octaves: u32,
    pub texture_persistence: f64,
    /// Samples per pixel along each axis.
    pub supersample: usize,
    pub max_attempts: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            canvas_size: 256.0,
            crop_size: 64,
            crop_extent: [48.0, 96.0],
            overlap_range: [0.1, 0.7],
            scale_range: [1.0, 4.0],
            jitter: 0.0,
            texture_cell: 32.0,
            texture_octaves: 4,
            texture_persistence: 0.5,
            supersample: 2,
            max_attempts: 10_000,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Largest side ratio for which both crops can meet the overlap range:
    /// the two ratios differ by the squared side ratio.
    pub fn feasible_max_scale(&self) -> f64 {
        (self.overlap_range[1] / self.overlap_range[0]).sqrt()
    }

    /// The configured scale range clipped to [`Self::feasible_max_scale`].
    pub fn effective_scale_range(&self) -> [f64; 2] {
        let hi = self.scale_range[1].min(self.feasible_max_scale());
        [self.scale_range[0], hi.max(self.scale_range[0])]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(OetrError::InvalidConfig(m));
        let [olo, ohi] = self.overlap_range;
        if !(olo > 0.0 && olo <= ohi && ohi <= 1.0) {
            return bad(format!("overlap range {:?} must satisfy 0 < lo <= hi <= 1", self.overlap_range));
        }
        let [slo, shi] = self.scale_range;
        if !(slo >= 1.0 && slo <= shi && shi.is_finite()) {
            return bad(format!("scale range {:?} must satisfy 1 <= lo <= hi", self.scale_range));
        }
        let [elo, ehi] = self.crop_extent;
        if !(elo > 0.0 && elo <= ehi) {
            return bad(format!("crop extent {:?} must be positive and ordered", self.crop_extent));
        }
        if ehi * self.effective_scale_range()[1] > self.canvas_size {
            return bad(format!(
                "largest crop {} does not fit the {} canvas",
                ehi * self.effective_scale_range()[1],
                self.canvas_size
            ));
        }
        if self.crop_size == 0 || self.supersample == 0 || self.max_attempts == 0 {
            return bad("crop size, supersampling and attempt count must be positive".into());
        }
        if !(0.0..0.25).contains(&self.jitter) {
            return bad(format!("jitter {} must lie in [0, 0.25)", self.jitter));
        }
        if !(self.texture_cell > 0.0 && self.texture_octaves > 0 && self.texture_persistence > 0.0) {
            return bad("texture parameters must be positive".into());
        }
        Ok(())
    }

    pub fn texture(&self) -> Texture {
        Texture {
            seed: self.seed,
            base_cell: self.texture_cell,
            octaves: self.texture_octaves,
            persistence: self.texture_persistence,
        }
    }
}

/// Square crop on the canvas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Crop {
    pub x: f64,
    pub y: f64,
    pub side: f64,
}

impl Crop {
    fn corners(&self) -> [Pt; 4] {
        let (x, y, s) = (self.x, self.y, self.side);
        [[x, y], [x + s, y], [x + s, y + s], [x, y + s]]
    }
}

/// How a pair was cut from the canvas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropPair {
    pub a: Crop,
    pub b: Crop,
    /// Canvas positions of B's image corners (top-left, top-right,
    /// bottom-right, bottom-left); B's square when there is no jitter.
    pub b_quad: [[f64; 2]; 4],
}

/// Exact co-visible boxes of a crop pair in normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairTargets {
    /// `(x_min, y_min, x_max, y_max)` in `[0, 1]`.
    pub box_a: [f64; 4],
    pub box_b: [f64; 4],
    /// Co-visible area over image area.
    pub overlap_a: f64,
    pub overlap_b: f64,
}

impl CropPair {
    pub fn aligned(a: Crop, b: Crop) -> Self {
        Self { a, b, b_quad: b.corners() }
    }

    /// Homography from B's normalized image coordinates to the canvas.
    pub fn b_homography(&self) -> Result<Matrix3<f64>> {
        square_to_quad(&self.b_quad).ok_or_else(|| OetrError::Generation("degenerate crop quad".into()))
    }

    /// Closed-form targets from the crop geometry; `None` when the crops do
    /// not overlap.
    pub fn targets(&self) -> Result<Option<PairTargets>> {
        let h = self.b_homography()?;
        let hinv = h
            .try_inverse()
            .ok_or_else(|| OetrError::Generation("singular crop homography".into()))?;
        let a = self.a;
        let in_a = clip_to_rect(&self.b_quad, a.x, a.y, a.x + a.side, a.y + a.side);
        let a_in_b: Vec<Pt> = a.corners().iter().map(|&p| apply(&hinv, p)).collect();
        let in_b = clip_to_rect(&a_in_b, 0.0, 0.0, 1.0, 1.0);
        if in_a.len() < 3 || in_b.len() < 3 {
            return Ok(None);
        }
        let (overlap_a, overlap_b) = (area(&in_a) / (a.side * a.side), area(&in_b));
        if overlap_a <= 0.0 || overlap_b <= 0.0 {
            return Ok(None);
        }
        let ba = bounds(&in_a);
        let box_a = [
            (ba[0] - a.x) / a.side,
            (ba[1] - a.y) / a.side,
            (ba[2] - a.x) / a.side,
            (ba[3] - a.y) / a.side,
        ]
        .map(|v| v.clamp(0.0, 1.0));
        let box_b = bounds(&in_b).map(|v| v.clamp(0.0, 1.0));
        Ok(Some(PairTargets {
            box_a,
            box_b,
            overlap_a,
            overlap_b,
        }))
    }
}

/// One generated training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub index: u64,
    /// `[3, crop_size, crop_size]` in `[0, 1]`.
    pub image_a: Tensor<f64>,
    pub image_b: Tensor<f64>,
    pub target_a: OverlapTarget,
    pub target_b: OverlapTarget,
    /// Ground-truth boxes in pixels.
    pub box_a: OverlapBox,
    pub box_b: OverlapBox,
    pub record: CropPair,
    pub overlap: [f64; 2],
}

fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn in_range(v: f64, r: [f64; 2]) -> bool {
    v >= r[0] && v <= r[1]
}

fn propose(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> CropPair {
    let [slo, shi] = cfg.effective_scale_range();
    let scale = if shi > slo { rng.random_range(slo..=shi) } else { slo };
    let [elo, ehi] = cfg.crop_extent;
    let small = if ehi > elo { rng.random_range(elo..=ehi) } else { elo };
    let big = small * scale;
    let c = cfg.canvas_size;
    let bx = rng.random_range(0.0..=(c - big));
    let by = rng.random_range(0.0..=(c - big));
    let span = |b: f64| ((b - small).max(0.0), (b + big).min(c - small));
    let (x0, x1) = span(bx);
    let (y0, y1) = span(by);
    let sx = rng.random_range(x0..=x1);
    let sy = rng.random_range(y0..=y1);
    let big_crop = Crop { x: bx, y: by, side: big };
    let small_crop = Crop { x: sx, y: sy, side: small };
    let (a, b) = if rng.random_bool(0.5) {
        (small_crop, big_crop)
    } else {
        (big_crop, small_crop)
    };
    let mut quad = b.corners();
    if cfg.jitter > 0.0 {
        let m = cfg.jitter * b.side;
        for p in &mut quad {
            p[0] += rng.random_range(-m..=m);
            p[1] += rng.random_range(-m..=m);
        }
    }
    CropPair { a, b, b_quad: quad }
}

/// Renders crop A (axis-aligned) or B (through its homography).
fn render(cfg: &SynthConfig, tex: &Texture, map: impl Fn(f64, f64) -> Pt) -> Tensor<f64> {
    let n = cfg.crop_size;
    let ss = cfg.supersample;
    let mut out = Tensor::zeros([3, n, n]);
    let data = out.data_mut();
    let inv = 1.0 / (ss * ss) as f64;
    for i in 0..n {
        for j in 0..n {
            let mut acc = [0.0; 3];
            for si in 0..ss {
                for sj in 0..ss {
                    let u = (j as f64 + (sj as f64 + 0.5) / ss as f64) / n as f64;
                    let v = (i as f64 + (si as f64 + 0.5) / ss as f64) / n as f64;
                    let [x, y] = map(u, v);
                    let c = tex.sample(x, y);
                    for k in 0..3 {
                        acc[k] += c[k];
                    }
                }
            }
            for k in 0..3 {
                data[k * n * n + i * n + j] = acc[k] * inv;
            }
        }
    }
    out
}

/// Deterministic training pair number `index` of the configured stream.
pub fn generate_pair(cfg: &SynthConfig, index: u64) -> Result<TrainSample> {
    cfg.validate()?;
    let mut rng = sample_rng(cfg.seed, index);
    for _ in 0..cfg.max_attempts {
        let record = propose(cfg, &mut rng);
        let Some(t) = record.targets()? else {
            continue;
        };
        if !(in_range(t.overlap_a, cfg.overlap_range) && in_range(t.overlap_b, cfg.overlap_range)) {
            continue;
        }
        return build_sample(cfg, index, record, t);
    }
    Err(OetrError::Generation(format!(
        "no crop pair met overlap range {:?} at scales {:?} within {} attempts",
        cfg.overlap_range, cfg.scale_range, cfg.max_attempts
    )))
}

/// Renders a sample for a given crop geometry.
pub fn render_pair(cfg: &SynthConfig, index: u64, record: CropPair) -> Result<TrainSample> {
    cfg.validate()?;
    let t = record
        .targets()?
        .ok_or_else(|| OetrError::Generation("crops do not overlap".into()))?;
    build_sample(cfg, index, record, t)
}

fn build_sample(cfg: &SynthConfig, index: u64, record: CropPair, t: PairTargets) -> Result<TrainSample> {
    let tex = cfg.texture();
    let a = record.a;
    let image_a = render(cfg, &tex, |u, v| [a.x + u * a.side, a.y + v * a.side]);
    let h = record.b_homography()?;
    let image_b = render(cfg, &tex, |u, v| apply(&h, [u, v]));
    let n = cfg.crop_size as f64;
    let to_px = |b: [f64; 4]| OverlapBox::new(b[0] * n, b[1] * n, b[2] * n, b[3] * n);
    let box_a = to_px(t.box_a)?;
    let box_b = to_px(t.box_b)?;
    Ok(TrainSample {
        index,
        image_a,
        image_b,
        target_a: OverlapTarget::from_box(&box_a, n, n)?,
        target_b: OverlapTarget::from_box(&box_b, n, n)?,
        box_a,
        box_b,
        record,
        overlap: [t.overlap_a, t.overlap_b],
    })
}
