use serde::{Deserialize, Serialize};

use super::image::{resample, to_rgb};
use super::transform::{ImageTransform, PIPELINE_SCHEMA_VERSION};
use crate::error::{invalid_input, OetrError, Result};
use crate::geometry::{overlap_scale_ratio, OverlapBox};
use crate::model::Oetr;
use crate::numerics::{Real, Tensor};

/// Long side of the resized inputs, matching the default evaluation setting.
pub const DEFAULT_TARGET_LONG_SIDE: usize = 1200;

/// Resized image on a zero canvas, plus where its content sits.
#[derive(Debug, Clone, PartialEq)]
pub struct Resized {
    pub image: Tensor<f64>,
    pub transform: ImageTransform,
    /// `(height, width)` of the resized content at the top-left.
    pub valid: (usize, usize),
}

/// Isotropic resize so the longer side equals `long_side`, then zero padding
/// on the right and bottom to a square whose side is the next multiple of
/// `multiple`.
pub fn resize_pad(image: &Tensor<f64>, long_side: usize, multiple: usize) -> Result<Resized> {
    let (c, h, w) = image.dims3()?;
    if h == 0 || w == 0 {
        return Err(invalid_input("empty image"));
    }
    if long_side == 0 || multiple == 0 {
        return Err(invalid_input("target side and padding multiple must be positive"));
    }
    let r = long_side as f64 / h.max(w) as f64;
    let nw = ((w as f64 * r).round() as usize).clamp(1, long_side);
    let nh = ((h as f64 * r).round() as usize).clamp(1, long_side);
    let side = long_side.div_ceil(multiple) * multiple;
    let content = if (nw, nh) == (w, h) {
        image.clone()
    } else {
        resample(image, [0.0, 0.0], r, nw, nh)?
    };
    let mut out = Tensor::zeros([c, side, side]);
    let (src, dst) = (content.data(), out.data_mut());
    for ch in 0..c {
        for y in 0..nh {
            let s = (ch * nh + y) * nw;
            let d = (ch * side + y) * side;
            dst[d..d + nw].copy_from_slice(&src[s..s + nw]);
        }
    }
    Ok(Resized {
        image: out,
        transform: ImageTransform {
            resize: r,
            pad: [0.0, 0.0],
            crop_origin: [0.0, 0.0],
            crop_ratio: 1.0,
            input_size: [w, h],
            output_size: [side, side],
        },
        valid: (nh, nw),
    })
}

/// Predicted overlap of one image, in its original pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageOverlap {
    pub bbox: OverlapBox,
    /// The box had to be widened to stay inside the image.
    pub degenerate: bool,
    pub max_prob: f64,
    /// The center probability map is close to uniform.
    pub low_confidence: bool,
    pub transform: ImageTransform,
}

/// Output of [`estimate_overlap`], also the `estimate` JSON document.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapEstimate {
    pub version: u32,
    pub a: ImageOverlap,
    pub b: ImageOverlap,
}

impl OverlapEstimate {
    pub fn low_confidence(&self) -> bool {
        self.a.low_confidence || self.b.low_confidence
    }
}

/// Resizes and pads both images, runs the network and maps the predicted
/// boxes back to original pixels.
pub fn estimate_overlap<T: Real>(
    model: &Oetr<T>,
    image_a: &Tensor<f64>,
    image_b: &Tensor<f64>,
    long_side: usize,
) -> Result<OverlapEstimate> {
    let stride = model.config().stride();
    let ra = resize_pad(&to_rgb(image_a)?, long_side, stride)?;
    let rb = resize_pad(&to_rgb(image_b)?, long_side, stride)?;
    let (pa, pb) = model.predict_valid(&ra.image.cast(), &rb.image.cast(), ra.valid, rb.valid)?;
    let finish = |p: &crate::model::OverlapPrediction, t: ImageTransform| {
        let back = t.box_to_input(&p.bbox);
        ImageOverlap {
            bbox: back.bbox,
            degenerate: p.degenerate || back.degenerate,
            max_prob: p.max_prob,
            low_confidence: p.low_confidence,
            transform: t,
        }
    };
    Ok(OverlapEstimate {
        version: PIPELINE_SCHEMA_VERSION,
        a: finish(&pa, ra.transform),
        b: finish(&pb, rb.transform),
    })
}

/// Overlap crops resampled to a common scale.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedPair {
    pub crop_a: Tensor<f64>,
    pub crop_b: Tensor<f64>,
    pub transform_a: ImageTransform,
    pub transform_b: ImageTransform,
    /// Scale ratio of the two boxes before alignment.
    pub scale_ratio: f64,
}

fn check_box(b: &OverlapBox, w: usize, h: usize, name: &str) -> Result<()> {
    let slack = 1e-9;
    if b.validate().is_err() || b.width() < 1.0 || b.height() < 1.0 {
        return Err(invalid_input(format!("overlap box of image {name} is degenerate: {b:?}")));
    }
    if b.x_min < -slack || b.y_min < -slack || b.x_max > w as f64 + slack || b.y_max > h as f64 + slack {
        return Err(invalid_input(format!("overlap box of image {name} exceeds its {w}x{h} image: {b:?}")));
    }
    Ok(())
}

/// Cuts both overlap boxes (at sub-pixel origin) and resamples them so their
/// contents share one scale.
///
/// The crop of the larger box is scaled by its image's full-resize ratio
/// (`long_side / max(H, W)`); the other crop is scaled by that ratio times
/// the overlap scale ratio. Both ratios shrink together if either crop would
/// exceed `long_side`.
pub fn crop_and_align(
    image_a: &Tensor<f64>,
    image_b: &Tensor<f64>,
    box_a: &OverlapBox,
    box_b: &OverlapBox,
    long_side: usize,
) -> Result<AlignedPair> {
    if long_side == 0 {
        return Err(invalid_input("target side must be positive"));
    }
    let (_, ha, wa) = image_a.dims3()?;
    let (_, hb, wb) = image_b.dims3()?;
    check_box(box_a, wa, ha, "A")?;
    check_box(box_b, wb, hb, "B")?;
    let s = overlap_scale_ratio(box_a, box_b)?;
    let l = long_side as f64;
    let a_larger = box_a.area() >= box_b.area();
    let base = if a_larger { l / ha.max(wa) as f64 } else { l / hb.max(wb) as f64 };
    let (mut ra, mut rb) = if a_larger { (base, base * s) } else { (base * s, base) };
    let long = |b: &OverlapBox| b.width().max(b.height());
    let fit = (l / (long(box_a) * ra)).min(l / (long(box_b) * rb)).min(1.0);
    ra *= fit;
    rb *= fit;

    let cut = |img: &Tensor<f64>, b: &OverlapBox, r: f64, w: usize, h: usize| -> Result<(Tensor<f64>, ImageTransform)> {
        let ow = ((b.width() * r).round() as usize).clamp(1, long_side);
        let oh = ((b.height() * r).round() as usize).clamp(1, long_side);
        let origin = [b.x_min, b.y_min];
        let crop = resample(img, origin, r, ow, oh)?;
        let t = ImageTransform {
            resize: 1.0,
            pad: [0.0, 0.0],
            crop_origin: origin,
            crop_ratio: r,
            input_size: [w, h],
            output_size: [ow, oh],
        };
        Ok((crop, t))
    };
    if !(ra.is_finite() && rb.is_finite()) {
        return Err(OetrError::NumericalDegeneracy("non-finite crop ratio".into()));
    }
    let (crop_a, transform_a) = cut(image_a, box_a, ra, wa, ha)?;
    let (crop_b, transform_b) = cut(image_b, box_b, rb, wb, hb)?;
    Ok(AlignedPair {
        crop_a,
        crop_b,
        transform_a,
        transform_b,
        scale_ratio: s,
    })
}
