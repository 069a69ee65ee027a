use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use oetr::geometry::{compute_overlap_gt, CameraFrame, DepthMap, GtOverlap, OverlapBox, OverlapParams, PairGeometry};
use oetr::loss::model_loss_grad_check;
use oetr::model::{save_checkpoint, ModelConfig, Oetr};
use oetr::numerics::{container::read_tensor, op_gradient_suite, GradCheckReport};
use oetr::pipeline::{
    crop_and_align, estimate_overlap, read_image, warp_back, write_image, MatchRecord, OverlapEstimate,
    PairTransforms, PIPELINE_SCHEMA_VERSION,
};
use oetr::synth::{evaluate_synthetic_matching, smoothed_loss, train_toy, SynthConfig, TrainConfig};
use oetr::Real;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Cli, Command, NumericalFailure, UsageError};

/// Per-op tolerance of the gradient suite.
const OP_TOLERANCE: f64 = 1e-6;
/// Tolerance of the end-to-end loss check.
const MODEL_TOLERANCE: f64 = 1e-4;

/// Contents of the `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    model: Option<ModelConfig>,
    synth: SynthConfig,
    train: TrainConfig,
    overlap: OverlapParams,
}

struct Context_ {
    cfg: RunConfig,
    output: Option<PathBuf>,
}

impl Context_ {
    fn emit(&self, value: &impl Serialize) -> Result<()> {
        let text = serde_json::to_string_pretty(value)? + "\n";
        match &self.output {
            Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
            None => {
                print!("{text}");
                Ok(())
            }
        }
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text)
                .map_err(|e| UsageError(format!("config {}: {e}", p.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.synth.seed = s;
        cfg.train.init_seed = s;
    }
    Ok(cfg)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(cli.config.as_deref(), cli.seed)?;
    let ctx = Context_ { cfg, output: cli.output };
    let wide = cli.f64;
    match cli.command {
        Command::Estimate {
            image_a,
            image_b,
            checkpoint,
            long_side,
            pairs_list,
            workers,
        } => {
            if wide {
                estimate::<f64>(&ctx, image_a, image_b, &checkpoint, long_side, pairs_list, workers)
            } else {
                estimate::<f32>(&ctx, image_a, image_b, &checkpoint, long_side, pairs_list, workers)
            }
        }
        Command::Preprocess {
            image_a,
            image_b,
            out_dir,
            boxes,
            checkpoint,
            long_side,
        } => preprocess(&ctx, &image_a, &image_b, &out_dir, boxes.as_deref(), checkpoint.as_deref(), long_side, wide),
        Command::Warpback { matches, transforms } => {
            let record = MatchRecord::from_json(&read_text(&matches)?).with_context(|| matches.display().to_string())?;
            let t = PairTransforms::from_json(&read_text(&transforms)?)
                .with_context(|| transforms.display().to_string())?;
            ctx.emit(&warp_back(&record, &t.a, &t.b)?)
        }
        Command::GtOverlap {
            cameras,
            depth_a,
            depth_b,
            depth_tol,
            min_pixels,
        } => {
            let mut params = ctx.cfg.overlap;
            params.depth_tol = depth_tol.unwrap_or(params.depth_tol);
            params.min_overlap_pixels = min_pixels.unwrap_or(params.min_overlap_pixels);
            gt_overlap(&ctx, &cameras, &depth_a, &depth_b, params)
        }
        Command::TrainToy {
            steps,
            log,
            checkpoint_out,
        } => {
            if wide {
                train::<f64>(&ctx, steps, log.as_deref(), checkpoint_out.as_deref())
            } else {
                train::<f32>(&ctx, steps, log.as_deref(), checkpoint_out.as_deref())
            }
        }
        Command::EvalSynth {
            checkpoint,
            pairs,
            keypoints,
            first_index,
        } => {
            let report = if wide {
                evaluate_synthetic_matching(&load_model::<f64>(&checkpoint)?, &ctx.cfg.synth, first_index, pairs, keypoints)?
            } else {
                evaluate_synthetic_matching(&load_model::<f32>(&checkpoint)?, &ctx.cfg.synth, first_index, pairs, keypoints)?
            };
            ctx.emit(&report)
        }
        Command::Gradcheck { size, ops_only } => gradcheck(&ctx, size, ops_only),
    }
}

fn load_model<T: Real>(dir: &Path) -> Result<Oetr<T>> {
    Oetr::load(dir).with_context(|| format!("loading checkpoint {}", dir.display()))
}

#[derive(Serialize)]
struct BatchEntry {
    image_a: PathBuf,
    image_b: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    estimate: Option<OverlapEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn read_pairs_list(path: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut pairs = Vec::new();
    for (n, line) in read_text(path)?.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [a, b] = fields[..] else {
            anyhow::bail!(oetr::OetrError::Format(format!(
                "{}:{}: expected two image paths",
                path.display(),
                n + 1
            )));
        };
        pairs.push((base.join(a), base.join(b)));
    }
    Ok(pairs)
}

fn estimate_pair<T: Real>(model: &Oetr<T>, a: &Path, b: &Path, long_side: usize) -> Result<OverlapEstimate> {
    let ia = read_image(a).with_context(|| a.display().to_string())?;
    let ib = read_image(b).with_context(|| b.display().to_string())?;
    Ok(estimate_overlap(model, &ia, &ib, long_side)?)
}

fn estimate<T: Real>(
    ctx: &Context_,
    image_a: Option<PathBuf>,
    image_b: Option<PathBuf>,
    checkpoint: &Path,
    long_side: usize,
    pairs_list: Option<PathBuf>,
    workers: usize,
) -> Result<()> {
    let model = load_model::<T>(checkpoint)?;
    let Some(list) = pairs_list else {
        let (a, b) = image_a.zip(image_b).ok_or_else(|| UsageError("two images are required".into()))?;
        return ctx.emit(&estimate_pair(&model, &a, &b, long_side)?);
    };
    if workers == 0 {
        return Err(UsageError("--workers must be at least 1".into()).into());
    }
    let pairs = read_pairs_list(&list)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
    let results: Vec<Result<OverlapEstimate>> =
        pool.install(|| pairs.par_iter().map(|(a, b)| estimate_pair(&model, a, b, long_side)).collect());
    let mut first_error = None;
    let mut entries = Vec::with_capacity(pairs.len());
    for ((a, b), r) in pairs.into_iter().zip(results) {
        let (estimate, error) = match r {
            Ok(e) => (Some(e), None),
            Err(e) => {
                let msg = format!("{e:#}");
                first_error.get_or_insert(e);
                (None, Some(msg))
            }
        };
        entries.push(BatchEntry {
            image_a: a,
            image_b: b,
            estimate,
            error,
        });
    }
    ctx.emit(&entries)?;
    match first_error {
        Some(e) => Err(e.context("at least one pair failed")),
        None => Ok(()),
    }
}

#[derive(Serialize)]
struct PreprocessOutput {
    crop_a: PathBuf,
    crop_b: PathBuf,
    transforms: PathBuf,
    scale_ratio: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    estimate: Option<OverlapEstimate>,
}

#[allow(clippy::too_many_arguments)]
fn preprocess(
    ctx: &Context_,
    a: &Path,
    b: &Path,
    out_dir: &Path,
    boxes: Option<&Path>,
    checkpoint: Option<&Path>,
    long_side: usize,
    wide: bool,
) -> Result<()> {
    let ia = read_image(a).with_context(|| a.display().to_string())?;
    let ib = read_image(b).with_context(|| b.display().to_string())?;
    let (est, predicted) = match (boxes, checkpoint) {
        (Some(path), _) => {
            let e: OverlapEstimate = serde_json::from_str(&read_text(path)?)
                .map_err(oetr::OetrError::from)
                .with_context(|| path.display().to_string())?;
            if e.version != PIPELINE_SCHEMA_VERSION {
                anyhow::bail!(oetr::OetrError::Format(format!("{}: box schema version {}", path.display(), e.version)));
            }
            (e, false)
        }
        (None, Some(dir)) => {
            let e = if wide {
                estimate_overlap(&load_model::<f64>(dir)?, &ia, &ib, long_side)?
            } else {
                estimate_overlap(&load_model::<f32>(dir)?, &ia, &ib, long_side)?
            };
            (e, true)
        }
        (None, None) => return Err(UsageError("either --boxes or --checkpoint is required".into()).into()),
    };
    let aligned = crop_and_align(&ia, &ib, &est.a.bbox, &est.b.bbox, long_side)?;
    fs::create_dir_all(out_dir).with_context(|| out_dir.display().to_string())?;
    let out = PreprocessOutput {
        crop_a: out_dir.join("crop_a.ppm"),
        crop_b: out_dir.join("crop_b.ppm"),
        transforms: out_dir.join("transforms.json"),
        scale_ratio: aligned.scale_ratio,
        estimate: predicted.then_some(est),
    };
    let ext = |img: &oetr::Tensor<f64>, p: &Path| if img.shape()[0] == 1 { p.with_extension("pgm") } else { p.to_path_buf() };
    let out = PreprocessOutput {
        crop_a: ext(&aligned.crop_a, &out.crop_a),
        crop_b: ext(&aligned.crop_b, &out.crop_b),
        ..out
    };
    write_image(&out.crop_a, &aligned.crop_a)?;
    write_image(&out.crop_b, &aligned.crop_b)?;
    let t = PairTransforms::new(aligned.transform_a, aligned.transform_b);
    fs::write(&out.transforms, serde_json::to_string_pretty(&t)? + "\n")?;
    ctx.emit(&out)
}

#[derive(Serialize)]
struct GtOutput {
    version: u32,
    box_a: Option<OverlapBox>,
    box_b: Option<OverlapBox>,
    accepted_a_to_b: usize,
    accepted_b_to_a: usize,
    /// Settings that produced the boxes.
    params: OverlapParams,
}

fn read_depth(path: &Path) -> Result<DepthMap> {
    let t = read_tensor(path).with_context(|| path.display().to_string())?;
    DepthMap::from_tensor(&t.into_real::<f64>()).with_context(|| path.display().to_string())
}

fn gt_overlap(ctx: &Context_, cameras: &Path, depth_a: &Path, depth_b: &Path, params: OverlapParams) -> Result<()> {
    let g = PairGeometry::from_json(&read_text(cameras)?).with_context(|| cameras.display().to_string())?;
    let fa = CameraFrame::new(g.camera_a.intrinsics()?, read_depth(depth_a)?).context("camera A")?;
    let fb = CameraFrame::new(g.camera_b.intrinsics()?, read_depth(depth_b)?).context("camera B")?;
    let GtOverlap {
        boxes,
        accepted_a_to_b,
        accepted_b_to_a,
        params,
    } = compute_overlap_gt(&fa, &fb, &g.relative_pose()?, params)?;
    ctx.emit(&GtOutput {
        version: PIPELINE_SCHEMA_VERSION,
        box_a: boxes.map(|b| b.0),
        box_b: boxes.map(|b| b.1),
        accepted_a_to_b,
        accepted_b_to_a,
        params,
    })
}

#[derive(Serialize)]
struct TrainSummary {
    steps: usize,
    final_loss: Option<f64>,
    smoothed_loss_step_50: Option<f64>,
    smoothed_loss_step_500: Option<f64>,
    evals: Vec<oetr::synth::EvalRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    checkpoint: Option<PathBuf>,
}

fn train<T: Real>(ctx: &Context_, steps: Option<usize>, log: Option<&Path>, checkpoint: Option<&Path>) -> Result<()> {
    let model_cfg = ctx.cfg.model.clone().unwrap_or_default();
    let mut train = ctx.cfg.train.clone();
    train.steps = steps.unwrap_or(train.steps);
    let mut log_file = match log {
        Some(p) => Some(std::io::BufWriter::new(
            fs::File::create(p).with_context(|| p.display().to_string())?,
        )),
        None => None,
    };
    let outcome = train_toy::<T>(
        &model_cfg,
        &ctx.cfg.synth,
        &train,
        log_file.as_mut().map(|w| w as &mut dyn std::io::Write),
    )?;
    if let Some(dir) = checkpoint {
        let mut meta = BTreeMap::new();
        meta.insert("steps".to_string(), serde_json::json!(outcome.losses.len()));
        meta.insert("synth".to_string(), serde_json::to_value(&ctx.cfg.synth)?);
        meta.insert("train".to_string(), serde_json::to_value(&train)?);
        save_checkpoint(dir, &model_cfg, outcome.model.params(), meta)?;
    }
    const WINDOW: usize = 50;
    ctx.emit(&TrainSummary {
        steps: outcome.losses.len(),
        final_loss: outcome.losses.last().map(|r| r.total),
        smoothed_loss_step_50: smoothed_loss(&outcome.losses, 50, WINDOW),
        smoothed_loss_step_500: smoothed_loss(&outcome.losses, 500, WINDOW),
        evals: outcome.evals,
        checkpoint: checkpoint.map(Path::to_path_buf),
    })
}

#[derive(Serialize)]
struct GradcheckRow {
    #[serde(flatten)]
    report: GradCheckReport,
    tolerance: f64,
    pass: bool,
}

fn gradcheck(ctx: &Context_, size: usize, ops_only: bool) -> Result<()> {
    let seed = ctx.cfg.train.init_seed;
    let mut rows: Vec<GradcheckRow> = op_gradient_suite(seed)?
        .into_iter()
        .map(|report| GradcheckRow {
            pass: report.max_rel_error < OP_TOLERANCE,
            report,
            tolerance: OP_TOLERANCE,
        })
        .collect();
    if !ops_only {
        let model = ctx.cfg.model.clone().unwrap_or_else(ModelConfig::tiny);
        let report = model_loss_grad_check(model, seed, size)?;
        rows.push(GradcheckRow {
            pass: report.max_rel_error < MODEL_TOLERANCE,
            report,
            tolerance: MODEL_TOLERANCE,
        });
    }
    let failed: Vec<&str> = rows.iter().filter(|r| !r.pass).map(|r| r.report.name.as_str()).collect();
    if ctx.output.is_some() {
        ctx.emit(&rows)?;
    } else {
        println!("{:<22} {:>8} {:>12} {:>9}  result", "operation", "coords", "max rel err", "tolerance");
        for r in &rows {
            println!(
                "{:<22} {:>8} {:>12.3e} {:>9.0e}  {}",
                r.report.name,
                r.report.coordinates,
                r.report.max_rel_error,
                r.tolerance,
                if r.pass { "ok" } else { "FAIL" }
            );
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(NumericalFailure(format!("gradient check failed for {}", failed.join(", "))).into())
    }
}
