use serde::{Deserialize, Serialize};

use super::network::{Oetr, PredictionVars};
use crate::error::{invalid_shape, Result};
use crate::geometry::OverlapBox;
use crate::numerics::{Real, Tape, Tensor};

/// Pixel box built from a center and offsets, with the clamp outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssembledBox {
    pub bbox: OverlapBox,
    /// Set when a side had to be widened to the one-pixel minimum.
    pub degenerate: bool,
}

/// Clamps `[lo, hi]` into `[0, size]` and widens it to at least one unit.
fn clamp_side(lo: f64, hi: f64, size: f64) -> (f64, f64, bool) {
    let lo = lo.clamp(0.0, size);
    let hi = hi.clamp(0.0, size);
    if hi - lo >= 1.0 || size < 1.0 {
        return (lo, hi.max(lo + f64::EPSILON), false);
    }
    let mid = 0.5 * (lo + hi);
    let start = (mid - 0.5).clamp(0.0, size - 1.0);
    (start, start + 1.0, true)
}

/// `(cx - l, cy - t, cx + r, cy + b)` scaled to a `width x height` image,
/// clamped to it, with every side at least one pixel long.
pub fn assemble_box(center: [f64; 2], offsets: [f64; 4], width: f64, height: f64) -> AssembledBox {
    let [cx, cy] = center;
    let [l, t, r, b] = offsets;
    clamp_box([(cx - l) * width, (cy - t) * height, (cx + r) * width, (cy + b) * height], width, height)
}

/// Clamps pixel corners `(x0, y0, x1, y1)` into a `width x height` image,
/// widening each side to at least one pixel.
pub fn clamp_box(corners: [f64; 4], width: f64, height: f64) -> AssembledBox {
    let [x0, y0, x1, y1] = corners;
    let (x0, x1, dx) = clamp_side(x0, x1, width);
    let (y0, y1, dy) = clamp_side(y0, y1, height);
    AssembledBox {
        bbox: OverlapBox {
            x_min: x0,
            y_min: y0,
            x_max: x1,
            y_max: y1,
        },
        degenerate: dx || dy,
    }
}

/// One image's predicted overlap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapPrediction {
    /// Center probabilities over the `[H_f, W_f]` grid, row-major.
    pub prob: Vec<f64>,
    pub grid: (usize, usize),
    /// Expected center, normalized `(x, y)`.
    pub center: [f64; 2],
    /// Normalized `(l, t, r, b)`.
    pub offsets: [f64; 4],
    /// Center obtained from the other image's query.
    pub consistency: [f64; 2],
    /// Box in pixels of the model input.
    pub bbox: OverlapBox,
    pub degenerate: bool,
    pub max_prob: f64,
    /// `max_prob < 2 / (H_f W_f)`.
    pub low_confidence: bool,
}

impl OverlapPrediction {
    pub fn from_vars<T: Real>(tape: &Tape<T>, v: &PredictionVars, width: usize, height: usize) -> Self {
        let read = |var| -> Vec<f64> { tape.value(var).data().iter().map(|x| x.to_f64_lossy()).collect() };
        let prob = read(v.prob);
        let c = read(v.center);
        let o = read(v.offsets);
        let k = read(v.consistency);
        let center = [c[0], c[1]];
        let offsets = [o[0], o[1], o[2], o[3]];
        let assembled = assemble_box(center, offsets, width as f64, height as f64);
        let max_prob = prob.iter().copied().fold(0.0, f64::max);
        let cells = (v.grid.0 * v.grid.1) as f64;
        Self {
            grid: v.grid,
            center,
            offsets,
            consistency: [k[0], k[1]],
            bbox: assembled.bbox,
            degenerate: assembled.degenerate,
            max_prob,
            low_confidence: max_prob < 2.0 / cells,
            prob,
        }
    }

    /// Predicted box in normalized `(cx, cy, w, h)`, before clamping.
    pub fn normalized_box(&self) -> [f64; 4] {
        let [cx, cy] = self.center;
        let [l, t, r, b] = self.offsets;
        [cx + 0.5 * (r - l), cy + 0.5 * (b - t), l + r, t + b]
    }
}

impl<T: Real> Oetr<T> {
    /// Inference on two `[3, H, W]` images of the same size whose top-left
    /// `valid_*` regions hold content.
    pub fn predict_valid(
        &self,
        image_a: &Tensor<T>,
        image_b: &Tensor<T>,
        valid_a: (usize, usize),
        valid_b: (usize, usize),
    ) -> Result<(OverlapPrediction, OverlapPrediction)> {
        let (_, h, w) = image_a.dims3()?;
        for (valid, name) in [(valid_a, "A"), (valid_b, "B")] {
            if valid.0 == 0 || valid.1 == 0 || valid.0 > h || valid.1 > w {
                return Err(invalid_shape(format!("valid region {valid:?} of image {name} exceeds {h}x{w}")));
            }
        }
        let tape = Tape::new();
        let g = self.bind(&tape, false);
        let a = tape.constant(image_a.clone());
        let b = tape.constant(image_b.clone());
        let (pa, pb) = g.forward(a, b, valid_a, valid_b)?;
        Ok((
            OverlapPrediction::from_vars(&tape, &pa, w, h),
            OverlapPrediction::from_vars(&tape, &pb, w, h),
        ))
    }

    pub fn predict(&self, image_a: &Tensor<T>, image_b: &Tensor<T>) -> Result<(OverlapPrediction, OverlapPrediction)> {
        let (_, h, w) = image_a.dims3()?;
        self.predict_valid(image_a, image_b, (h, w), (h, w))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn assemble_examples() {
        let a = assemble_box([0.5, 0.5], [0.25; 4], 100.0, 100.0);
        assert_eq!(a.bbox, OverlapBox::new(25.0, 25.0, 75.0, 75.0).unwrap());
        assert!(!a.degenerate);

        let a = assemble_box([0.1, 0.1], [0.5; 4], 100.0, 100.0);
        assert_eq!((a.bbox.x_min, a.bbox.y_min), (0.0, 0.0));
        assert_eq!((a.bbox.x_max, a.bbox.y_max), (60.0, 60.0));

        let a = assemble_box([0.5, 0.5], [1e-6; 4], 100.0, 100.0);
        assert!(a.degenerate);
        assert!((a.bbox.width() - 1.0).abs() < 1e-12 && (a.bbox.height() - 1.0).abs() < 1e-12);

        let a = assemble_box([1.0, 0.0], [0.0; 4], 64.0, 64.0);
        assert!(a.degenerate);
        assert_eq!(a.bbox, OverlapBox::new(63.0, 0.0, 64.0, 1.0).unwrap());
    }
}
