//! Matching evaluation with a simulated matcher on planar synthetic pairs.
//!
//! The matcher pairs every keypoint of A with its true location in B when
//! that location is co-visible and with a uniformly random point of B
//! otherwise, so outliers come only from non-overlapping regions. The matched
//! points double as the keypoints of B. Restricting
//! matches to the predicted overlap boxes then shows how much a box estimate
//! helps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cameras::planar_cameras;
use super::pair::{generate_pair, SynthConfig, TrainSample};
use super::train::predict_sample;
use crate::error::Result;
use crate::geometry::{evaluate_matches, iou, Match, MatchMetrics, OverlapBox, EPIPOLAR_THRESHOLD};
use crate::model::Oetr;
use crate::numerics::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchSummary {
    pub precision: f64,
    pub matching_score: f64,
}

/// Means over the evaluated pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthMatchReport {
    pub pairs: usize,
    pub keypoints: usize,
    pub mean_iou: f64,
    pub low_confidence_pairs: usize,
    /// All simulated matches.
    pub unfiltered: MatchSummary,
    /// Matches and keypoints inside the predicted boxes.
    pub filtered: MatchSummary,
}

fn contains(b: &OverlapBox, p: [f64; 2]) -> bool {
    (b.x_min..=b.x_max).contains(&p[0]) && (b.y_min..=b.y_max).contains(&p[1])
}

struct PairScores {
    iou: f64,
    low_confidence: bool,
    unfiltered: MatchSummary,
    filtered: MatchSummary,
}

/// Simulated matches of one sample, scored as is and restricted to the given
/// pixel boxes; returns `(unfiltered, filtered)`.
pub fn simulate_matching(
    cfg: &SynthConfig,
    s: &TrainSample,
    box_a: &OverlapBox,
    box_b: &OverlapBox,
    keypoints: usize,
) -> Result<(MatchSummary, MatchSummary)> {
    let res = cfg.crop_size;
    let scene = planar_cameras(&s.record, res)?;
    let (ka, kb) = (scene.frame_a.intrinsics, scene.frame_b.intrinsics);
    let (a, b) = (s.record.a, s.record.b);
    let n = res as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6d61_7463_6865_7273);
    rng.set_stream(s.index);
    let point = |rng: &mut ChaCha8Rng| [rng.random_range(0.0..n), rng.random_range(0.0..n)];
    let mut matches = Vec::with_capacity(keypoints);
    for _ in 0..keypoints {
        let pa = point(&mut rng);
        let x = a.x + pa[0] / n * a.side;
        let y = a.y + pa[1] / n * a.side;
        let pb = [(x - b.x) / b.side * n, (y - b.y) / b.side * n];
        let visible = (0.0..n).contains(&pb[0]) && (0.0..n).contains(&pb[1]);
        let target = if visible { pb } else { point(&mut rng) };
        matches.push(Match::new(pa, target));
    }
    let all = evaluate_matches(&matches, &ka, &kb, &scene.pose, EPIPOLAR_THRESHOLD, keypoints, keypoints)?;
    let kept: Vec<Match> = matches
        .iter()
        .filter(|m| contains(box_a, m.a) && contains(box_b, m.b))
        .copied()
        .collect();
    let count_a = matches.iter().filter(|m| contains(box_a, m.a)).count();
    let count_b = matches.iter().filter(|m| contains(box_b, m.b)).count();
    let inside = evaluate_matches(&kept, &ka, &kb, &scene.pose, EPIPOLAR_THRESHOLD, count_a, count_b)?;
    let summary = |m: MatchMetrics| MatchSummary {
        precision: m.precision,
        matching_score: m.matching_score,
    };
    Ok((summary(all), summary(inside)))
}

fn score_pair<T: Real>(model: &Oetr<T>, cfg: &SynthConfig, index: u64, keypoints: usize) -> Result<PairScores> {
    let s = generate_pair(cfg, index)?;
    let (pa, pb) = predict_sample(model, &s)?;
    let (unfiltered, filtered) = simulate_matching(cfg, &s, &pa.bbox, &pb.bbox, keypoints)?;
    Ok(PairScores {
        iou: 0.5 * (iou(&pa.bbox, &s.box_a)? + iou(&pb.bbox, &s.box_b)?),
        low_confidence: pa.low_confidence || pb.low_confidence,
        unfiltered,
        filtered,
    })
}

/// Scores `count` unjittered pairs starting at sample `first_index`, with
/// `keypoints` simulated keypoints per image.
pub fn evaluate_synthetic_matching<T: Real>(
    model: &Oetr<T>,
    synth: &SynthConfig,
    first_index: u64,
    count: usize,
    keypoints: usize,
) -> Result<SynthMatchReport> {
    let cfg = SynthConfig {
        jitter: 0.0,
        ..synth.clone()
    };
    cfg.validate()?;
    let scores = (first_index..first_index + count as u64)
        .into_par_iter()
        .map(|i| score_pair(model, &cfg, i, keypoints))
        .collect::<Result<Vec<_>>>()?;
    let k = scores.len().max(1) as f64;
    let mean = |f: &dyn Fn(&PairScores) -> f64| scores.iter().map(f).sum::<f64>() / k;
    Ok(SynthMatchReport {
        pairs: scores.len(),
        keypoints,
        mean_iou: mean(&|s| s.iou),
        low_confidence_pairs: scores.iter().filter(|s| s.low_confidence).count(),
        unfiltered: MatchSummary {
            precision: mean(&|s| s.unfiltered.precision),
            matching_score: mean(&|s| s.unfiltered.matching_score),
        },
        filtered: MatchSummary {
            precision: mean(&|s| s.filtered.precision),
            matching_score: mean(&|s| s.filtered.matching_score),
        },
    })
}
