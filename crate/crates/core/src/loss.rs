//! Training objective: center consistency, center localization, GIoU and L1
//! box terms, summed over both images of a pair.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{OetrError, Result};
use crate::geometry::OverlapBox;
use crate::model::{ModelConfig, Oetr, OverlapPrediction, PredictionVars};
use crate::numerics::{grad_check, GradCheckReport, Real, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub con: f64,
    pub loc: f64,
    pub iou: f64,
    pub l1: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            con: 1.0,
            loc: 1.0,
            iou: 0.5,
            l1: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.con, self.loc, self.iou, self.l1];
        if w.iter().all(|v| v.is_finite() && *v >= 0.0) {
            Ok(())
        } else {
            Err(OetrError::InvalidConfig(format!("loss weights must be finite and >= 0, got {w:?}")))
        }
    }
}

/// Ground truth for one image, normalized to the image size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapTarget {
    /// `(cx, cy, w, h)`.
    pub bbox: [f64; 4],
    pub center: [f64; 2],
}

impl OverlapTarget {
    pub fn new(bbox: [f64; 4], center: [f64; 2]) -> Result<Self> {
        let t = Self { bbox, center };
        t.validate()?;
        Ok(t)
    }

    /// Target for a pixel box in a `width x height` image, centered on the box.
    pub fn from_box(b: &OverlapBox, width: f64, height: f64) -> Result<Self> {
        let bbox = b.to_cxcywh(width, height);
        Self::new(bbox, [bbox[0], bbox[1]])
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = self.bbox.iter().chain(&self.center).all(|v| (0.0..=1.0).contains(v));
        if !in_unit || self.bbox[2] <= 0.0 || self.bbox[3] <= 0.0 {
            return Err(OetrError::InvalidTarget(format!("{self:?} is outside [0, 1] or has no area")));
        }
        Ok(())
    }

    /// `(x_min, y_min, x_max, y_max)` in normalized coordinates.
    pub fn corners(&self) -> [f64; 4] {
        let [cx, cy, w, h] = self.bbox;
        [cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0]
    }
}

/// Weighted sub-losses of one image.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TermBreakdown {
    pub con: f64,
    pub loc: f64,
    pub iou: f64,
    pub l1: f64,
}

impl TermBreakdown {
    pub fn total(&self) -> f64 {
        self.con + self.loc + self.iou + self.l1
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub a: TermBreakdown,
    pub b: TermBreakdown,
}

/// Differentiable loss pieces of one image: `[con, loc, iou, l1]`, weighted.
pub struct ImageLoss {
    pub terms: [Var; 4],
    pub sum: Var,
}

/// Predicted box quantities on a tape.
#[derive(Debug, Clone, Copy)]
pub struct PredictedBox {
    /// Expected center `[2]`.
    pub center: Var,
    /// Cross-decoded center `[2]`.
    pub consistency: Var,
    /// `(l, t, r, b)` `[4]`.
    pub offsets: Var,
}

impl From<&PredictionVars> for PredictedBox {
    fn from(p: &PredictionVars) -> Self {
        Self {
            center: p.center,
            consistency: p.consistency,
            offsets: p.offsets,
        }
    }
}

fn constant<T: Real>(tape: &Tape<T>, values: &[f64]) -> Result<Var> {
    Ok(tape.constant(Tensor::from_f64([values.len()], values)?))
}

fn l1_to<T: Real>(tape: &Tape<T>, x: Var, target: &[f64]) -> Result<Var> {
    let t = constant(tape, target)?;
    let diff = tape.sub(x, t)?;
    Ok(tape.sum(tape.abs(diff)))
}

/// `1 - GIoU` between a predicted box given by corner variables and a fixed
/// target box; every variable has shape `[1]`.
fn giou_loss<T: Real>(tape: &Tape<T>, p: [Var; 4], g: [f64; 4]) -> Result<Var> {
    let [x1, y1, x2, y2] = p;
    let gv = g.map(|v| tape.constant(Tensor::scalar(T::lit(v))));
    let [gx1, gy1, gx2, gy2] = gv;
    let iw = tape.relu(tape.sub(tape.minimum(x2, gx2)?, tape.maximum(x1, gx1)?)?);
    let ih = tape.relu(tape.sub(tape.minimum(y2, gy2)?, tape.maximum(y1, gy1)?)?);
    let inter = tape.mul(iw, ih)?;
    let area_p = tape.mul(tape.sub(x2, x1)?, tape.sub(y2, y1)?)?;
    let area_g = (g[2] - g[0]) * (g[3] - g[1]);
    let union = tape.sub(tape.add_scalar(area_p, T::lit(area_g)), inter)?;
    let hw = tape.sub(tape.maximum(x2, gx2)?, tape.minimum(x1, gx1)?)?;
    let hh = tape.sub(tape.maximum(y2, gy2)?, tape.minimum(y1, gy1)?)?;
    let hull = tape.mul(hw, hh)?;
    let iou = tape.div(inter, union)?;
    let empty = tape.div(tape.sub(hull, union)?, hull)?;
    let giou = tape.sub(iou, empty)?;
    Ok(tape.add_scalar(tape.scale(giou, -T::one()), T::one()))
}

/// Weighted loss terms of one image.
pub fn image_loss<T: Real>(tape: &Tape<T>, pred: PredictedBox, target: &OverlapTarget, w: &LossWeights) -> Result<ImageLoss> {
    target.validate()?;
    let at = |v: Var, i: usize| tape.slice(v, i, 1);
    let (cx, cy) = (at(pred.center, 0)?, at(pred.center, 1)?);
    let [l, t, r, b] = [0, 1, 2, 3].map(|i| at(pred.offsets, i));
    let (l, t, r, b) = (l?, t?, r?, b?);

    let con = l1_to(tape, pred.consistency, &target.center)?;
    let loc = l1_to(tape, pred.center, &target.center)?;

    let corners = [tape.sub(cx, l)?, tape.sub(cy, t)?, tape.add(cx, r)?, tape.add(cy, b)?];
    let iou = giou_loss(tape, corners, target.corners())?;

    let half = T::lit(0.5);
    let bcx = tape.add(cx, tape.scale(tape.sub(r, l)?, half))?;
    let bcy = tape.add(cy, tape.scale(tape.sub(b, t)?, half))?;
    let bw = tape.add(l, r)?;
    let bh = tape.add(t, b)?;
    let boxed = tape.concat(&[bcx, bcy, bw, bh])?;
    let l1 = l1_to(tape, boxed, &target.bbox)?;

    let terms = [
        tape.scale(con, T::lit(w.con)),
        tape.scale(loc, T::lit(w.loc)),
        tape.scale(iou, T::lit(w.iou)),
        tape.scale(l1, T::lit(w.l1)),
    ];
    let sum = tape.add(tape.add(terms[0], terms[1])?, tape.add(terms[2], terms[3])?)?;
    Ok(ImageLoss { terms, sum })
}

fn read_terms<T: Real>(tape: &Tape<T>, l: &ImageLoss) -> TermBreakdown {
    let v = l.terms.map(|t| tape.scalar(t).to_f64_lossy());
    TermBreakdown {
        con: v[0],
        loc: v[1],
        iou: v[2],
        l1: v[3],
    }
}

/// Loss of a pair on a tape; returns the scalar root and its breakdown.
pub fn pair_loss<T: Real>(
    tape: &Tape<T>,
    pred_a: PredictedBox,
    pred_b: PredictedBox,
    target_a: &OverlapTarget,
    target_b: &OverlapTarget,
    w: &LossWeights,
) -> Result<(Var, LossBreakdown)> {
    w.validate()?;
    let la = image_loss(tape, pred_a, target_a, w)?;
    let lb = image_loss(tape, pred_b, target_b, w)?;
    let total = tape.add(la.sum, lb.sum)?;
    let breakdown = LossBreakdown {
        total: tape.scalar(total).to_f64_lossy(),
        a: read_terms(tape, &la),
        b: read_terms(tape, &lb),
    };
    Ok((total, breakdown))
}

/// Loss of two finished predictions.
pub fn total_loss(
    pred_a: &OverlapPrediction,
    pred_b: &OverlapPrediction,
    target_a: &OverlapTarget,
    target_b: &OverlapTarget,
    w: &LossWeights,
) -> Result<LossBreakdown> {
    let tape = Tape::<f64>::new();
    let pack = |p: &OverlapPrediction| -> Result<PredictedBox> {
        Ok(PredictedBox {
            center: constant(&tape, &p.center)?,
            consistency: constant(&tape, &p.consistency)?,
            offsets: constant(&tape, &p.offsets)?,
        })
    };
    let (pa, pb) = (pack(pred_a)?, pack(pred_b)?);
    Ok(pair_loss(&tape, pa, pb, target_a, target_b, w)?.1)
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub total: f64,
    pub a: TermBreakdown,
    pub b: TermBreakdown,
}

/// Finite-difference check of the pair loss with respect to every parameter
/// of a freshly initialized model, on two seeded `size x size` noise images.
pub fn model_loss_grad_check(config: ModelConfig, seed: u64, size: usize) -> Result<GradCheckReport> {
    let model = Oetr::<f64>::new(config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise = || Tensor::from_fn([3, size, size], |_| rng.random::<f64>());
    let (a, b) = (noise(), noise());
    let ta = OverlapTarget::new([0.4, 0.45, 0.5, 0.6], [0.4, 0.45])?;
    let tb = OverlapTarget::new([0.6, 0.5, 0.7, 0.5], [0.6, 0.5])?;
    let valid = (size, size);
    grad_check("model loss", model.params().values(), 1e-5, |tape, vars| {
        let g = model.bind_vars(tape, vars.to_vec())?;
        let (pa, pb) = g.forward(tape.constant(a.clone()), tape.constant(b.clone()), valid, valid)?;
        Ok(pair_loss(tape, (&pa).into(), (&pb).into(), &ta, &tb, &LossWeights::default())?.0)
    })
}
