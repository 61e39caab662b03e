//! vpforge command line: free-form mask generation, training, inpainting,
//! evaluation, and gradient checking.
//!
//! Exit codes: 0 success, 2 validation failure (bad inputs, files, config),
//! 3 numeric failure (non-finite values, threshold violations, unreachable
//! ratio buckets).

mod commands;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "vpforge",
    version,
    about = "Free-form video inpainting toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate free-form mask videos (or structured sr/interp masks).
    GenMasks {
        /// Run configuration JSON; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for mask videos and the manifest.
        #[arg(long)]
        out: PathBuf,
        /// curve | object | bbox | sr | interp
        #[arg(long = "type")]
        mask_type: Option<String>,
        /// Ratio bucket as lo:hi, e.g. 0.3:0.4.
        #[arg(long)]
        bucket: Option<String>,
        /// Number of mask videos to generate.
        #[arg(long)]
        count: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
        /// Border constraint: on | off.
        #[arg(long)]
        border: Option<String>,
        /// Dimensions as TxHxW, e.g. 8x180x320.
        #[arg(long)]
        dims: Option<String>,
        /// Generate the full test corpus grid (7 buckets x curve/object x
        /// border on/off), `count` videos per cell.
        #[arg(long)]
        preset: Option<String>,
    },
    /// Train a model on a directory of (frames, masks) clip pairs.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset root: one subdirectory per clip, each holding frames/ and masks/.
        #[arg(long)]
        data: PathBuf,
        /// Output directory for checkpoints and the training log CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Inpaint a video with a trained model; unmasked pixels pass through
    /// byte-identically.
    Inpaint {
        #[arg(long)]
        ckpt: PathBuf,
        /// Directory of frame_%05d.ppm input frames.
        #[arg(long)]
        video: PathBuf,
        /// Directory of mask_%05d.pgm hole masks.
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also dump per-layer first-channel gate maps as PGM sequences.
        #[arg(long)]
        dump_gates: Option<PathBuf>,
    },
    /// Evaluate a checkpoint over a dataset and write a metrics CSV.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Report CSV path.
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Finite-difference gradient verification.
    GradCheck {
        /// conv3d | activation | upsample | gated_conv3d | snconv3d |
        /// losses | generator | all
        #[arg(long, default_value = "all")]
        target: String,
        /// single | double
        #[arg(long, default_value = "double")]
        dtype: String,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
    },
    /// Write a deterministic synthetic dataset (clips with frames and masks),
    /// ready for `train`.
    DemoData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        clips: u32,
        #[arg(long, default_value_t = 16)]
        frames: usize,
        /// Dimensions as HxW.
        #[arg(long, default_value = "64x64")]
        dims: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenMasks {
            config,
            out,
            mask_type,
            bucket,
            count,
            seed,
            border,
            dims,
            preset,
        } => commands::gen_masks(
            config.as_deref(),
            &out,
            mask_type.as_deref(),
            bucket.as_deref(),
            count,
            seed,
            border.as_deref(),
            dims.as_deref(),
            preset.as_deref(),
        ),
        Command::Train { config, data, out } => commands::train(config.as_deref(), &data, &out),
        Command::Inpaint {
            ckpt,
            video,
            mask,
            out,
            dump_gates,
        } => commands::inpaint(&ckpt, &video, &mask, &out, dump_gates.as_deref()),
        Command::Eval {
            ckpt,
            data,
            report,
            config,
        } => commands::eval(&ckpt, &data, &report, config.as_deref()),
        Command::GradCheck { target, dtype, eps } => commands::grad_check(&target, &dtype, eps),
        Command::DemoData {
            out,
            clips,
            frames,
            dims,
            seed,
        } => commands::demo_data(&out, clips, frames, &dims, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            if err.is_validation() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
