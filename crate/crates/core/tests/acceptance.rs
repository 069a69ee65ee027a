//! Acceptance criteria A1-A8. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Pass criterion ids (`A3`, ...) as arguments
//! to run a subset.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{Matrix3, Point2, Vector3};
use oetr::geometry::{
    compute_overlap_gt, evaluate_matches, iou, overlap_scale_ratio, warp_pixel, CameraIntrinsics, Match,
    OverlapBox, OverlapParams, RelativePose, Warp, EPIPOLAR_THRESHOLD,
};
use oetr::loss::{model_loss_grad_check, total_loss, LossWeights, OverlapTarget};
use oetr::model::{ModelConfig, OverlapPrediction};
use oetr::numerics::{linear_attention, op_gradient_suite, reference_attention};
use oetr::pipeline::{resize_pad, warp_back, ImageTransform, Keypoint, MatchRecord};
use oetr::synth::{
    generate_pair, planar_cameras, predict_sample, smoothed_loss, train_toy, SynthConfig, TrainConfig,
    HELDOUT_OFFSET,
};
use oetr::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn a1_gradients() -> Verdict {
    let ops = op_gradient_suite(0).expect("op suite");
    let (worst_op, worst) = ops
        .iter()
        .map(|r| (r.name.as_str(), r.max_rel_error))
        .fold(("", 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });
    let model = model_loss_grad_check(ModelConfig::tiny(), 0, 32).expect("model check");
    verdict(
        worst < 1e-6 && model.max_rel_error < 1e-4,
        format!(
            "{} ops, worst {worst:.2e} ({worst_op}) < 1e-6; end-to-end loss on 32x32 over {} params {:.2e} < 1e-4",
            ops.len(),
            model.coordinates,
            model.max_rel_error
        ),
    )
}

fn a2_attention() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (n_q, n_k) = (rng.random_range(1..=64), rng.random_range(1..=64));
        let (d, d_v) = (rng.random_range(1..=32), rng.random_range(1..=32));
        let mut t = |r: usize, c: usize| Tensor::from_fn([r, c], |_| rng.random_range(-2.0..2.0f64));
        let (q, k, v) = (t(n_q, d), t(n_k, d), t(n_k, d_v));
        let fast = linear_attention(&q, &k, &v, None).unwrap();
        let slow = reference_attention(&q, &k, &v, None).unwrap();
        for (a, b) in fast.data().iter().zip(slow.data()) {
            worst = worst.max((a - b).abs());
        }
    }
    verdict(worst <= 1e-5, format!("100 instances (N <= 64, d <= 32), max abs diff {worst:.2e} <= 1e-5"))
}

/// Spec examples that need a trained model; reported, not judged.
fn trained_model_examples(model: &oetr::model::Oetr<f32>) {
    let synth = SynthConfig::default();
    let n = 32u64;
    let mut coverage = 0.0;
    let mut low = 0;
    for i in 0..n {
        let s = generate_pair(&synth, HELDOUT_OFFSET + i).unwrap();
        let mut dup = s.clone();
        dup.image_b = dup.image_a.clone();
        let (pa, pb) = predict_sample(model, &dup).unwrap();
        let full = (synth.crop_size * synth.crop_size) as f64;
        coverage += (pa.bbox.area() / full).min(pb.bbox.area() / full);

        let other = SynthConfig {
            seed: 1 << 20,
            ..SynthConfig::default()
        };
        let mut disjoint = s.clone();
        disjoint.image_b = generate_pair(&other, HELDOUT_OFFSET + i).unwrap().image_b;
        let (pa, pb) = predict_sample(model, &disjoint).unwrap();
        low += usize::from(pa.low_confidence || pb.low_confidence);
    }
    println!(
        "   note: duplicate pairs (A, A): mean smaller box coverage {:.3} of the image (example asks >= 0.9)",
        coverage / n as f64
    );
    println!("   note: disjoint-texture pairs flagged low-confidence: {low}/{n}");
}

fn a3_training() -> Verdict {
    let train = TrainConfig {
        stop_at_iou: Some(0.7),
        ..TrainConfig::default()
    };
    let out = train_toy::<f32>(&ModelConfig::default(), &SynthConfig::default(), &train, None).expect("training");
    let best = out.evals.iter().map(|e| e.heldout_mean_iou).fold(0.0, f64::max);
    let reached = out.evals.iter().find(|e| e.heldout_mean_iou >= 0.7).map(|e| e.step);
    let s50 = smoothed_loss(&out.losses, 50, 50).unwrap_or(f64::NAN);
    let s500 = smoothed_loss(&out.losses, 500, 50).unwrap_or(f64::NAN);
    let curve: Vec<String> = out.evals.iter().map(|e| format!("{}:{:.3}", e.step, e.heldout_mean_iou)).collect();
    println!("   held-out IoU by step: {}", curve.join(" "));
    trained_model_examples(&out.model);
    verdict(
        reached.is_some() && s500 < s50,
        format!(
            "held-out IoU {best:.3} (>= 0.7 at step {}), smoothed loss step 50 {s50:.3} > step 500 {s500:.3}",
            reached.map_or("never".to_string(), |s| s.to_string())
        ),
    )
}

fn a4_geometry() -> Verdict {
    let res = 1024;
    let cfg = SynthConfig::default();
    let mut worst = 1.0f64;
    for i in 0..100 {
        let s = generate_pair(&cfg, 7_000_000 + i).unwrap();
        let t = s.record.targets().unwrap().unwrap();
        let scene = planar_cameras(&s.record, res).unwrap();
        let gt = compute_overlap_gt(&scene.frame_a, &scene.frame_b, &scene.pose, OverlapParams::default()).unwrap();
        let (ga, gb) = gt.boxes.expect("overlapping views");
        let r = res as f64;
        let scale = |b: [f64; 4]| OverlapBox::new(b[0] * r, b[1] * r, b[2] * r, b[3] * r).unwrap();
        worst = worst.min(iou(&ga, &scale(t.box_a)).unwrap()).min(iou(&gb, &scale(t.box_b)).unwrap());
    }
    verdict(worst >= 0.99, format!("100 unjittered pairs at {res}px, worst IoU {worst:.4} >= 0.99"))
}

fn a5_scale_ratio() -> Verdict {
    let b = |w: f64, h: f64| OverlapBox::new(0.0, 0.0, w, h).unwrap();
    let values = [
        overlap_scale_ratio(&b(100.0, 100.0), &b(100.0, 100.0)).unwrap(),
        overlap_scale_ratio(&b(100.0, 100.0), &b(50.0, 50.0)).unwrap(),
        overlap_scale_ratio(&b(100.0, 50.0), &b(50.0, 100.0)).unwrap(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut symmetric = true;
    for _ in 0..10_000 {
        let mut r = || b(rng.random_range(0.1..500.0), rng.random_range(0.1..500.0));
        let (x, y) = (r(), r());
        let (s, t) = (overlap_scale_ratio(&x, &y).unwrap(), overlap_scale_ratio(&y, &x).unwrap());
        symmetric &= s == t && s >= 1.0;
    }
    verdict(
        values == [1.0, 2.0, 2.0] && symmetric,
        format!("examples give {values:?} (expect [1, 2, 2] exactly); symmetric on 10^4 pairs: {symmetric}"),
    )
}

fn a6_pipeline() -> Verdict {
    let r = resize_pad(&Tensor::zeros([3, 600, 800]), 1200, 32).unwrap();
    let bookkeeping = r.transform.resize == 1.5 && r.valid == (900, 1200) && r.image.shape() == [3, 1216, 1216];

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut round_trip = 0.0f64;
    for _ in 0..10 {
        let t = ImageTransform {
            resize: rng.random_range(0.2..3.0),
            pad: [rng.random_range(0.0..100.0), rng.random_range(0.0..100.0)],
            crop_origin: [rng.random_range(0.0..300.0), rng.random_range(0.0..300.0)],
            crop_ratio: rng.random_range(0.2..3.0),
            input_size: [1000, 800],
            output_size: [4000, 4000],
        };
        let originals: Vec<[f64; 2]> =
            (0..1000).map(|_| [rng.random_range(0.0..1000.0), rng.random_range(0.0..800.0)]).collect();
        let mut rec = MatchRecord::empty(t.output_size, t.output_size);
        rec.keypoints_a = originals
            .iter()
            .map(|&p| {
                let [x, y] = t.forward(p);
                Keypoint { x, y, score: 1.0, outside: true }
            })
            .collect();
        let back = warp_back(&rec, &t, &t).unwrap();
        for (k, p) in back.keypoints_a.iter().zip(&originals) {
            round_trip = round_trip.max((k.x - p[0]).hypot(k.y - p[1]));
        }
    }

    let t = ImageTransform {
        resize: 1.5,
        pad: [0.0, 158.0],
        crop_origin: [100.0, 50.0],
        crop_ratio: 2.0,
        input_size: [800, 600],
        output_size: [400, 300],
    };
    let diag = |s: f64| Matrix3::new(s, 0.0, 0.0, 0.0, s, 0.0, 0.0, 0.0, 1.0);
    let shift = |x: f64, y: f64| Matrix3::new(1.0, 0.0, x, 0.0, 1.0, y, 0.0, 0.0, 1.0);
    let affine = diag(2.0) * shift(-100.0, -50.0) * shift(0.0, 158.0) * diag(1.5);
    let expect = affine.try_inverse().unwrap() * Vector3::new(40.0, 60.0, 1.0);
    let got = t.inverse([40.0, 60.0]);
    let oracle = (got[0] - expect.x).abs().max((got[1] - expect.y).abs());
    verdict(
        bookkeeping && round_trip < 1e-6 && oracle <= 1e-9,
        format!(
            "800x600 -> 1200x900 -> 1216x1216: {bookkeeping}; 10^4-point round trip {round_trip:.1e} px < 1e-6; affine oracle {oracle:.1e} <= 1e-9"
        ),
    )
}

fn prediction(target: &OverlapTarget) -> OverlapPrediction {
    let [cx, cy, w, h] = target.bbox;
    let [px, py] = target.center;
    let offsets = [px - (cx - w / 2.0), py - (cy - h / 2.0), cx + w / 2.0 - px, cy + h / 2.0 - py];
    OverlapPrediction {
        prob: vec![1.0],
        grid: (1, 1),
        center: target.center,
        offsets,
        consistency: target.center,
        bbox: OverlapBox::new(0.0, 0.0, 1.0, 1.0).unwrap(),
        degenerate: false,
        max_prob: 1.0,
        low_confidence: false,
    }
}

fn a7_loss() -> Verdict {
    // Dyadic values keep center +- offset exact.
    let ta = OverlapTarget::new([0.5, 0.375, 0.5, 0.25], [0.5, 0.375]).unwrap();
    let tb = OverlapTarget::new([0.25, 0.625, 0.375, 0.5], [0.25, 0.625]).unwrap();
    let w = LossWeights::default();
    let perfect = total_loss(&prediction(&ta), &prediction(&tb), &ta, &tb, &w).unwrap().total;

    let mut off_a = prediction(&ta);
    off_a.center = [0.45, 0.35];
    off_a.consistency = [0.55, 0.5];
    off_a.offsets = [0.2, 0.1, 0.25, 0.3];
    let mut off_b = prediction(&tb);
    off_b.center = [0.2, 0.7];
    off_b.offsets = [0.1, 0.3, 0.1, 0.2];
    let base = total_loss(&off_a, &off_b, &ta, &tb, &w).unwrap();
    let terms = |b: &oetr::loss::LossBreakdown| {
        [b.a.con, b.a.loc, b.a.iou, b.a.l1, b.b.con, b.b.loc, b.b.iou, b.b.l1]
    };
    let mut linear = true;
    for k in 0..4 {
        let mut doubled = w;
        *[&mut doubled.con, &mut doubled.loc, &mut doubled.iou, &mut doubled.l1][k] *= 2.0;
        let got = terms(&total_loss(&off_a, &off_b, &ta, &tb, &doubled).unwrap());
        let want = terms(&base);
        for i in 0..8 {
            let factor = if i % 4 == k { 2.0 } else { 1.0 };
            linear &= got[i] == want[i] * factor;
        }
    }
    let swapped = total_loss(&off_b, &off_a, &tb, &ta, &w).unwrap();
    let symmetric = swapped.total == base.total && swapped.a == base.b && swapped.b == base.a;
    let defaults = [w.con, w.loc, w.iou, w.l1] == [1.0, 1.0, 0.5, 0.5];
    verdict(
        perfect == 0.0 && linear && symmetric && defaults,
        format!(
            "perfect loss {perfect}; weight linearity exact: {linear}; a/b swap exact: {symmetric}; defaults [1, 1, 0.5, 0.5]: {defaults}"
        ),
    )
}

fn a8_metrics() -> Verdict {
    let k = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap();
    let pose =
        RelativePose::from_axis_angle(Vector3::new(0.1, 1.0, 0.0), 0.15, Vector3::new(-0.8, 0.05, 0.1)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut good = Vec::new();
    while good.len() < 1000 {
        let p = Point2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
        if let Warp::Visible { pixel, .. } = warp_pixel(p, rng.random_range(3.0..20.0), &k, &k, &pose).unwrap() {
            good.push(Match::new([p.x, p.y], [pixel.x, pixel.y]));
        }
    }
    let exact = evaluate_matches(&good, &k, &k, &pose, EPIPOLAR_THRESHOLD, 1000, 1000).unwrap();
    let mut targets: Vec<[f64; 2]> = good.iter().map(|m| m.b).collect();
    targets.shuffle(&mut rng);
    let permuted: Vec<Match> = good.iter().zip(&targets).map(|(m, b)| Match::new(m.a, *b)).collect();
    let wrong = evaluate_matches(&permuted, &k, &k, &pose, EPIPOLAR_THRESHOLD, 1000, 1000).unwrap();
    verdict(
        exact.precision == 1.0 && wrong.precision < 0.05,
        format!(
            "threshold {EPIPOLAR_THRESHOLD:e}: ground-truth matches P = {}, permuted P = {:.3} < 0.05",
            exact.precision, wrong.precision
        ),
    )
}

type Criterion = (&'static str, &'static str, Option<Duration>, fn() -> Verdict);

const CRITERIA: [Criterion; 8] = [
    ("A1", "gradient suite", Some(Duration::from_secs(300)), a1_gradients),
    ("A2", "attention oracle", Some(Duration::from_secs(30)), a2_attention),
    ("A3", "toy training", Some(Duration::from_secs(1800)), a3_training),
    ("A4", "geometry oracle", Some(Duration::from_secs(120)), a4_geometry),
    ("A5", "scale ratio", None, a5_scale_ratio),
    ("A6", "pipeline round trip", None, a6_pipeline),
    ("A7", "loss identities", None, a7_loss),
    ("A8", "match metrics", None, a8_metrics),
];

fn main() -> ExitCode {
    let wanted: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (id, name, limit, run) in CRITERIA {
        if !wanted.is_empty() && !wanted.iter().any(|w| w == id) {
            continue;
        }
        let start = Instant::now();
        let v = run();
        let took = start.elapsed();
        let in_time = limit.is_none_or(|l| took <= l);
        let pass = v.pass && in_time;
        failed += usize::from(!pass);
        let budget = limit.map_or(String::new(), |l| format!(" / {} s", l.as_secs()));
        println!(
            "{id} {} {name}: {} [{:.1} s{budget}]",
            if pass { "PASS" } else { "FAIL" },
            v.detail,
            took.as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
