use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::pair::{generate_pair, SynthConfig, TrainSample};
use crate::error::{OetrError, Result};
use crate::geometry::iou;
use crate::loss::{pair_loss, LossBreakdown, LossRecord, LossWeights, PredictedBox, TermBreakdown};
use crate::model::{ModelConfig, Oetr, OverlapPrediction};
use crate::numerics::{Real, Tape, Tensor};

/// Sample indices at or above this value form the held-out stream.
pub const HELDOUT_OFFSET: u64 = 1 << 48;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Rescale the batch gradient to at most this global norm.
    pub clip_norm: Option<f64>,
    /// Held-out evaluation period in steps; 0 disables it.
    pub eval_every: usize,
    pub eval_pairs: usize,
    /// Stop once held-out mean IoU reaches this value.
    pub stop_at_iou: Option<f64>,
    /// Seed for the weight initialization.
    pub init_seed: u64,
    pub loss_weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 8,
            learning_rate: 3e-4,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: None,
            eval_every: 100,
            eval_pairs: 64,
            stop_at_iou: None,
            init_seed: 0,
            loss_weights: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.batch_size > 0
            && self.learning_rate > 0.0
            && self.weight_decay >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.clip_norm.is_none_or(|c| c > 0.0);
        if !ok {
            return Err(OetrError::InvalidConfig(format!("bad training settings {self:?}")));
        }
        self.loss_weights.validate()
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW<T: Real> {
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    t: i32,
    lr: f64,
    wd: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl<T: Real> AdamW<T> {
    pub fn new(params: &[Tensor<T>], lr: f64, wd: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
        Self {
            m: zeros(),
            v: zeros(),
            t: 0,
            lr,
            wd,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>]) {
        self.t += 1;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let c1 = T::lit(1.0 - self.beta1.powi(self.t));
        let c2 = T::lit(1.0 - self.beta2.powi(self.t));
        let (lr, eps) = (T::lit(self.lr), T::lit(self.eps));
        let decay = T::one() - T::lit(self.lr * self.wd);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for (((x, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *x = *x * decay - lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

/// Held-out evaluation at one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    pub heldout_mean_iou: f64,
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Loss(LossRecord),
    Eval(EvalRecord),
}

pub struct TrainOutcome<T: Real> {
    pub model: Oetr<T>,
    pub losses: Vec<LossRecord>,
    pub evals: Vec<EvalRecord>,
}

/// Images of a batch padded to a common size that is a multiple of `multiple`,
/// with each image's content extent.
pub struct PaddedPair<T: Real> {
    pub image_a: Tensor<T>,
    pub image_b: Tensor<T>,
    pub valid_a: (usize, usize),
    pub valid_b: (usize, usize),
}

fn pad_to(img: &Tensor<f64>, h: usize, w: usize) -> Result<Tensor<f64>> {
    let (c, ih, iw) = img.dims3()?;
    let mut out = Tensor::zeros([c, h, w]);
    for ch in 0..c {
        for y in 0..ih {
            let src = &img.data()[(ch * ih + y) * iw..][..iw];
            out.data_mut()[(ch * h + y) * w..][..iw].copy_from_slice(src);
        }
    }
    Ok(out)
}

/// Zero-pads every image of the batch (right and bottom) to the smallest
/// common size divisible by `multiple`.
pub fn pad_batch<T: Real>(samples: &[TrainSample], multiple: usize) -> Result<Vec<PaddedPair<T>>> {
    let mut h = 0;
    let mut w = 0;
    for s in samples {
        for img in [&s.image_a, &s.image_b] {
            let (_, ih, iw) = img.dims3()?;
            h = h.max(ih);
            w = w.max(iw);
        }
    }
    let (h, w) = (h.div_ceil(multiple) * multiple, w.div_ceil(multiple) * multiple);
    samples
        .iter()
        .map(|s| {
            let dims = |t: &Tensor<f64>| (t.shape()[1], t.shape()[2]);
            Ok(PaddedPair {
                image_a: pad_to(&s.image_a, h, w)?.cast(),
                image_b: pad_to(&s.image_b, h, w)?.cast(),
                valid_a: dims(&s.image_a),
                valid_b: dims(&s.image_b),
            })
        })
        .collect()
}

/// Targets are normalized to the unpadded image; the network predicts in the
/// padded frame, so rescale when padding was added.
fn rescale_target(t: &crate::loss::OverlapTarget, valid: (usize, usize), padded: (usize, usize)) -> Result<crate::loss::OverlapTarget> {
    let sx = valid.1 as f64 / padded.1 as f64;
    let sy = valid.0 as f64 / padded.0 as f64;
    crate::loss::OverlapTarget::new(
        [t.bbox[0] * sx, t.bbox[1] * sy, t.bbox[2] * sx, t.bbox[3] * sy],
        [t.center[0] * sx, t.center[1] * sy],
    )
}

/// Loss and parameter gradients of one pair.
pub fn sample_gradients<T: Real>(
    model: &Oetr<T>,
    pair: &PaddedPair<T>,
    sample: &TrainSample,
    weights: &LossWeights,
) -> Result<(LossBreakdown, Vec<Tensor<T>>)> {
    let tape = Tape::new();
    let g = model.bind(&tape, true);
    let a = tape.constant(pair.image_a.clone());
    let b = tape.constant(pair.image_b.clone());
    let (pa, pb) = g.forward(a, b, pair.valid_a, pair.valid_b)?;
    let padded = (pair.image_a.shape()[1], pair.image_a.shape()[2]);
    let ta = rescale_target(&sample.target_a, pair.valid_a, padded)?;
    let tb = rescale_target(&sample.target_b, pair.valid_b, padded)?;
    let (root, breakdown) = pair_loss(&tape, PredictedBox::from(&pa), PredictedBox::from(&pb), &ta, &tb, weights)?;
    let mut grads = tape.backward(root)?;
    let out = g
        .param_vars()
        .iter()
        .zip(model.params().values())
        .map(|(&v, p)| grads.take_or_zeros(v, p.shape()))
        .collect();
    Ok((breakdown, out))
}

fn first_non_finite(b: &LossBreakdown) -> Option<&'static str> {
    let terms = |t: &TermBreakdown, side: &'static [&'static str; 4]| {
        [t.con, t.loc, t.iou, t.l1]
            .iter()
            .zip(side.iter())
            .find(|(v, _)| !v.is_finite())
            .map(|(_, n)| *n)
    };
    terms(&b.a, &["con_a", "loc_a", "iou_a", "l1_a"])
        .or_else(|| terms(&b.b, &["con_b", "loc_b", "iou_b", "l1_b"]))
        .or_else(|| (!b.total.is_finite()).then_some("total"))
}

fn mean_breakdown(items: &[LossBreakdown]) -> LossBreakdown {
    let n = items.len() as f64;
    let avg = |f: &dyn Fn(&LossBreakdown) -> f64| items.iter().map(f).sum::<f64>() / n;
    let side = |pick: &dyn Fn(&LossBreakdown) -> TermBreakdown| TermBreakdown {
        con: avg(&|b| pick(b).con),
        loc: avg(&|b| pick(b).loc),
        iou: avg(&|b| pick(b).iou),
        l1: avg(&|b| pick(b).l1),
    };
    LossBreakdown {
        total: avg(&|b| b.total),
        a: side(&|b| b.a),
        b: side(&|b| b.b),
    }
}

/// Per-pair IoUs of predicted against ground-truth pixel boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub mean_iou: f64,
    /// `[iou_a, iou_b]` per pair.
    pub ious: Vec<[f64; 2]>,
}

/// Predicts boxes for `count` held-out pairs starting at `first_index`.
pub fn evaluate_pairs<T: Real>(
    model: &Oetr<T>,
    synth: &SynthConfig,
    first_index: u64,
    count: usize,
) -> Result<EvalSummary> {
    let ious = (0..count as u64)
        .into_par_iter()
        .map(|k| {
            let s = generate_pair(synth, first_index + k)?;
            let (pa, pb) = predict_sample(model, &s)?;
            Ok([iou(&pa.bbox, &s.box_a)?, iou(&pb.bbox, &s.box_b)?])
        })
        .collect::<Result<Vec<_>>>()?;
    let mean_iou = ious.iter().map(|p| p[0] + p[1]).sum::<f64>() / (2 * ious.len().max(1)) as f64;
    Ok(EvalSummary { mean_iou, ious })
}

pub fn predict_sample<T: Real>(model: &Oetr<T>, s: &TrainSample) -> Result<(OverlapPrediction, OverlapPrediction)> {
    let pair = pad_batch::<T>(std::slice::from_ref(s), model.config().stride())?.remove(0);
    model.predict_valid(&pair.image_a, &pair.image_b, pair.valid_a, pair.valid_b)
}

fn global_norm<T: Real>(grads: &[Tensor<T>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v.to_f64_lossy().powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Trains a fresh model on the synthetic stream. Each step draws
/// `batch_size` consecutive pairs, averages their gradients in index order and
/// applies one AdamW update. Log records go to `log` as JSON lines.
pub fn train_toy<T: Real>(
    model_cfg: &ModelConfig,
    synth: &SynthConfig,
    train: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainOutcome<T>> {
    train.validate()?;
    synth.validate()?;
    let mut model = Oetr::<T>::new(model_cfg.clone(), train.init_seed)?;
    let mut opt = AdamW::new(
        model.params().values(),
        train.learning_rate,
        train.weight_decay,
        train.beta1,
        train.beta2,
        train.epsilon,
    );
    let mut losses = Vec::with_capacity(train.steps);
    let mut evals = Vec::new();
    let mut emit = |rec: LogRecord| -> Result<()> {
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "{}", serde_json::to_string(&rec)?)?;
        }
        Ok(())
    };

    for step in 1..=train.steps {
        let first = ((step - 1) * train.batch_size) as u64;
        let samples = (first..first + train.batch_size as u64)
            .into_par_iter()
            .map(|i| generate_pair(synth, i))
            .collect::<Result<Vec<_>>>()?;
        let padded = pad_batch::<T>(&samples, model_cfg.stride())?;
        let results = padded
            .par_iter()
            .zip(&samples)
            .map(|(p, s)| sample_gradients(&model, p, s, &train.loss_weights))
            .collect::<Result<Vec<_>>>()?;

        let mut sum: Vec<Tensor<T>> = model.params().values().iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
        let mut breakdowns = Vec::with_capacity(results.len());
        for ((b, grads), s) in results.into_iter().zip(&samples) {
            let term = first_non_finite(&b)
                .or_else(|| grads.iter().any(|g| !g.is_finite()).then_some("gradient"));
            if let Some(term) = term {
                return Err(OetrError::NonFinite {
                    step,
                    term: term.into(),
                    sample: s.index as usize,
                });
            }
            for (acc, g) in sum.iter_mut().zip(&grads) {
                acc.add_assign(g)?;
            }
            breakdowns.push(b);
        }
        let mut scale = 1.0 / train.batch_size as f64;
        if let Some(c) = train.clip_norm {
            let norm = global_norm(&sum) * scale;
            if norm > c {
                scale *= c / norm;
            }
        }
        let scale = T::lit(scale);
        for g in &mut sum {
            g.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
        opt.step(model.params_mut().values_mut(), &sum);

        let mean = mean_breakdown(&breakdowns);
        let rec = LossRecord {
            step,
            total: mean.total,
            a: mean.a,
            b: mean.b,
        };
        emit(LogRecord::Loss(rec))?;
        losses.push(rec);

        if train.eval_every > 0 && (step % train.eval_every == 0 || step == train.steps) {
            let e = evaluate_pairs(&model, synth, HELDOUT_OFFSET, train.eval_pairs)?;
            let rec = EvalRecord {
                step,
                heldout_mean_iou: e.mean_iou,
            };
            emit(LogRecord::Eval(rec))?;
            evals.push(rec);
            if train.stop_at_iou.is_some_and(|t| e.mean_iou >= t) {
                break;
            }
        }
    }
    Ok(TrainOutcome { model, losses, evals })
}

/// Mean of `losses[step - window/2 ..= step + window/2]` (1-based steps),
/// truncated at the ends.
pub fn smoothed_loss(losses: &[LossRecord], step: usize, window: usize) -> Option<f64> {
    if step == 0 || step > losses.len() {
        return None;
    }
    let half = window / 2;
    let lo = step.saturating_sub(half).max(1);
    let hi = (step + half).min(losses.len());
    let slice = &losses[lo - 1..hi];
    Some(slice.iter().map(|r| r.total).sum::<f64>() / slice.len() as f64)
}
