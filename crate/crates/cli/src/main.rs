//! `oetr`: overlap estimation, preprocessing for matchers, ground-truth
//! overlap and toy training from the command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use oetr::pipeline::DEFAULT_TARGET_LONG_SIDE;
use oetr::synth::HELDOUT_OFFSET;
use oetr::OetrError;

#[derive(Debug, Parser)]
#[command(name = "oetr", version, about = "Overlap estimation between image pairs")]
struct Cli {
    /// Seed for weight initialization and the synthetic pair stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON file with optional `model`, `synth`, `train` and `overlap`
    /// sections; missing fields keep their defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Run the network in 64-bit floats instead of 32-bit.
    #[arg(long, global = true)]
    f64: bool,
    /// Write the JSON result to this file instead of stdout.
    #[arg(long, short, global = true, value_name = "FILE")]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Predict the overlap boxes of an image pair, in original pixels.
    Estimate {
        #[arg(required_unless_present = "pairs_list", requires = "image_b")]
        image_a: Option<PathBuf>,
        image_b: Option<PathBuf>,
        /// Checkpoint directory.
        #[arg(long, env = "OETR_CHECKPOINT")]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TARGET_LONG_SIDE)]
        long_side: usize,
        /// Text file with two image paths per line (relative to the file).
        #[arg(long, value_name = "FILE", conflicts_with = "image_a")]
        pairs_list: Option<PathBuf>,
        /// Pairs processed concurrently in batch mode.
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Crop both overlap regions and resample them to a common scale.
    Preprocess {
        image_a: PathBuf,
        image_b: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Boxes from `estimate`; the checkpoint is used when absent.
        #[arg(long, value_name = "FILE")]
        boxes: Option<PathBuf>,
        #[arg(long, env = "OETR_CHECKPOINT")]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_TARGET_LONG_SIDE)]
        long_side: usize,
    },
    /// Map matches found on preprocessed crops back to the original images.
    Warpback { matches: PathBuf, transforms: PathBuf },
    /// Ground-truth co-visible boxes from cameras and depth maps.
    GtOverlap {
        cameras: PathBuf,
        depth_a: PathBuf,
        depth_b: PathBuf,
        /// Relative depth tolerance of the occlusion check.
        #[arg(long)]
        depth_tol: Option<f64>,
        /// Fewest accepted pixels that count as an overlap.
        #[arg(long)]
        min_pixels: Option<usize>,
    },
    /// Train the network on synthetic crop pairs.
    TrainToy {
        #[arg(long)]
        steps: Option<usize>,
        /// JSON-lines training log.
        #[arg(long, value_name = "FILE")]
        log: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        checkpoint_out: Option<PathBuf>,
    },
    /// Box IoU and simulated matching precision on held-out synthetic pairs.
    EvalSynth {
        #[arg(long, env = "OETR_CHECKPOINT")]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 64)]
        pairs: usize,
        #[arg(long, default_value_t = 512)]
        keypoints: usize,
        #[arg(long, default_value_t = HELDOUT_OFFSET)]
        first_index: u64,
    },
    /// Finite-difference check of every tape operation and the full loss.
    /// Always runs in 64-bit floats.
    Gradcheck {
        /// Side of the images used for the end-to-end check.
        #[arg(long, default_value_t = 32)]
        size: usize,
        /// Skip the end-to-end model check.
        #[arg(long)]
        ops_only: bool,
    },
}

/// Bad invocation that clap cannot detect.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

/// A check finished but its result is out of tolerance.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct NumericalFailure(String);

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if cause.is::<NumericalFailure>() {
            return 3;
        }
        if let Some(e) = cause.downcast_ref::<OetrError>() {
            return match e {
                OetrError::InvalidConfig(_) => 1,
                e if e.is_numerical() => 3,
                _ => 2,
            };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
