use std::fmt::Write as _;
use std::path::Path;

use vpforge_core::config::RunConfig;
use vpforge_core::demo::synthetic_clip;
use vpforge_core::error::{Error, Result};
use vpforge_core::gradcheck;
use vpforge_core::io;
use vpforge_core::loss::FeatureExtractor;
use vpforge_core::mask::{
    gen_interp_mask, gen_mask_video, gen_sr_mask, MaskType, MaskVideo, MaskVideoConfig,
    RATIO_BUCKETS,
};
use vpforge_core::model::{composite, make_masked_input, ModelState};
use vpforge_core::nn::SnMode;
use vpforge_core::rng::Rng;
use vpforge_core::tensor::{Dtype, Scalar, Tensor5};
use vpforge_core::train::{self, evaluate, load_dataset, run_training};

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn parse_dims(text: &str) -> Result<(usize, usize, usize)> {
    let parts: Vec<_> = text.split('x').collect();
    if parts.len() != 3 {
        return Err(Error::Config(format!("dims must be TxHxW, got '{text}'")));
    }
    let mut vals = [0usize; 3];
    for (v, p) in vals.iter_mut().zip(&parts) {
        *v = p
            .parse()
            .map_err(|_| Error::Config(format!("bad dimension '{p}' in '{text}'")))?;
    }
    Ok((vals[0], vals[1], vals[2]))
}

fn parse_bucket(text: &str) -> Result<(f64, f64)> {
    let (lo, hi) = text
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("bucket must be lo:hi, got '{text}'")))?;
    let lo: f64 = lo
        .parse()
        .map_err(|_| Error::Config(format!("bad bucket bound '{lo}'")))?;
    let hi: f64 = hi
        .parse()
        .map_err(|_| Error::Config(format!("bad bucket bound '{hi}'")))?;
    Ok((lo, hi))
}

#[derive(serde::Serialize)]
struct ManifestVideo {
    dir: String,
    seed: u64,
    ratio: f64,
    attempts: u32,
}

#[derive(serde::Serialize)]
struct Manifest<'a> {
    seed: u64,
    config: &'a MaskVideoConfig,
    videos: Vec<ManifestVideo>,
}

fn emit_mask_corpus(base: &MaskVideoConfig, count: u32, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let mut videos = Vec::with_capacity(count as usize);
    for index in 0..count {
        let mut cfg = base.clone();
        cfg.seed = Rng::derive(base.seed, index as u64).next_u64();
        let video = gen_mask_video(&cfg)?;
        let dir = format!("mask_{index:04}");
        video.write(&out.join(&dir))?;
        videos.push(ManifestVideo {
            dir,
            seed: cfg.seed,
            ratio: video.ratio,
            attempts: video.attempts,
        });
    }
    let manifest = Manifest {
        seed: base.seed,
        config: base,
        videos,
    };
    std::fs::write(
        out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).map_err(|e| Error::Config(e.to_string()))?,
    )?;
    Ok(())
}

fn emit_single_mask(video: &MaskVideo, kind: &str, out: &Path, seed: u64) -> Result<()> {
    std::fs::create_dir_all(out)?;
    video.write(&out.join("mask_0000"))?;
    let manifest = serde_json::json!({
        "seed": seed,
        "type": kind,
        "videos": [{"dir": "mask_0000", "ratio": video.ratio}],
    });
    std::fs::write(
        out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).map_err(|e| Error::Config(e.to_string()))?,
    )?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn gen_masks(
    config: Option<&Path>,
    out: &Path,
    mask_type: Option<&str>,
    bucket: Option<&str>,
    count: Option<u32>,
    seed: Option<u64>,
    border: Option<&str>,
    dims: Option<&str>,
    preset: Option<&str>,
) -> Result<()> {
    let run = load_config(config)?;
    let mut cfg = run.masks.gen.clone();
    let mut count = count.unwrap_or(run.masks.count);
    if let Some(d) = dims {
        let (t, h, w) = parse_dims(d)?;
        cfg.frames = t;
        cfg.height = h;
        cfg.width = w;
    }
    if let Some(b) = bucket {
        let (lo, hi) = parse_bucket(b)?;
        cfg.ratio_lo = lo;
        cfg.ratio_hi = hi;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    match border {
        Some("on") => cfg.border_constraint = true,
        Some("off") => cfg.border_constraint = false,
        Some(other) => {
            return Err(Error::Config(format!(
                "--border must be on|off, got '{other}'"
            )))
        }
        None => {}
    }

    if let Some(p) = preset {
        if p != "test-corpus" {
            return Err(Error::Config(format!("unknown preset '{p}'")));
        }
        if count == 1 {
            count = 100;
        }
        for mask_type in [MaskType::Curve, MaskType::Object] {
            for border in [false, true] {
                for (lo, hi) in RATIO_BUCKETS {
                    let mut cell = cfg.clone();
                    cell.mask_type = mask_type;
                    cell.border_constraint = border;
                    cell.ratio_lo = lo;
                    cell.ratio_hi = hi;
                    cell.seed = Rng::derive(
                        cfg.seed,
                        (lo * 100.0) as u64 ^ ((mask_type as u64) << 32) ^ ((border as u64) << 40),
                    )
                    .next_u64();
                    let name = format!(
                        "{}_{}_border-{}",
                        match mask_type {
                            MaskType::Curve => "curve",
                            MaskType::Object => "object",
                            MaskType::Bbox => "bbox",
                        },
                        format_args!("{lo:.1}-{hi:.1}"),
                        if border { "on" } else { "off" }
                    );
                    emit_mask_corpus(&cell, count, &out.join(name))?;
                }
            }
        }
        return Ok(());
    }

    match mask_type {
        Some("sr") => {
            let video = gen_sr_mask(cfg.frames, cfg.height, cfg.width, run.masks.sr_factor)?;
            emit_single_mask(&video, "sr", out, cfg.seed)
        }
        Some("interp") => {
            let video = gen_interp_mask(
                cfg.frames,
                cfg.height,
                cfg.width,
                run.masks.interp_keep_every,
            )?;
            emit_single_mask(&video, "interp", out, cfg.seed)
        }
        other => {
            if let Some(t) = other {
                cfg.mask_type = t.parse()?;
            }
            emit_mask_corpus(&cfg, count, out)
        }
    }
}

fn train_typed<T: Scalar>(run: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    let clips = load_dataset::<T>(data)?;
    let mut model: ModelState<T> = ModelState::new(run.model.clone(), run.train.seed)?;
    let fe = FeatureExtractor::<T>::from_config(
        &run.losses.extractor,
        run.model.generator.out_channels,
    )?;
    let cfg = run.train_config();
    std::fs::create_dir_all(out)?;
    let log = run_training(&mut model, &fe, &clips, &cfg, Some(out))?;

    let mut csv = String::from(train::TRAIN_CSV_HEADER);
    csv.push('\n');
    for row in &log {
        let _ = writeln!(&mut csv, "{}", row.to_csv());
    }
    std::fs::write(out.join("train_log.csv"), csv)?;
    if let Some(last) = log.last() {
        println!(
            "trained {} iterations: total {:.6}, masked_l1 {:.6}",
            last.iteration, last.losses.total, last.losses.l1_mask
        );
    }
    println!(
        "final checkpoint: {}",
        out.join(format!("ckpt_{:06}.vpf", cfg.iterations))
            .display()
    );
    Ok(())
}

pub fn train(config: Option<&Path>, data: &Path, out: &Path) -> Result<()> {
    let run = load_config(config)?;
    match run.train.dtype {
        Dtype::Single => train_typed::<f32>(&run, data, out),
        Dtype::Double => train_typed::<f64>(&run, data, out),
    }
}

pub fn inpaint(
    ckpt: &Path,
    video_dir: &Path,
    mask_dir: &Path,
    out: &Path,
    dump_gates: Option<&Path>,
) -> Result<()> {
    let mut model: ModelState<f32> = ModelState::load(ckpt)?;
    let video: Tensor5<f32> = io::read_video(video_dir)?;
    let mask: Tensor5<f32> = io::read_mask(mask_dir)?;
    let input = make_masked_input(&video, &mask)?;
    let (output, cache) = model.generator.forward(&input, SnMode::Frozen)?;
    let composited = composite(&output, &video, &mask)?;
    io::write_video(&composited, out)?;
    println!("wrote {} frames to {}", composited.dims().t, out.display());

    if let Some(gate_dir) = dump_gates {
        for (name, gate) in model.generator.gate_maps(&cache)? {
            let dir = gate_dir.join(format!("gate_{name}"));
            std::fs::create_dir_all(&dir)?;
            let d = gate.dims();
            let mut bytes = vec![0u8; d.h * d.w];
            for t in 0..d.t {
                for y in 0..d.h {
                    for x in 0..d.w {
                        bytes[y * d.w + x] =
                            (gate.at(0, 0, t, y, x).clamp(0.0, 1.0) * 255.0).round() as u8;
                    }
                }
                io::pnm::write_pgm(
                    &dir.join(format!("gate_{t:05}.pgm")),
                    &io::pnm::PnmImage {
                        width: d.w,
                        height: d.h,
                        data: bytes.clone(),
                    },
                )?;
            }
        }
        println!("gate maps dumped to {}", gate_dir.display());
    }
    Ok(())
}

pub fn eval(ckpt: &Path, data: &Path, report: &Path, config: Option<&Path>) -> Result<()> {
    let run = load_config(config)?;
    let mut model: ModelState<f32> = ModelState::load(ckpt)?;
    let clips = load_dataset::<f32>(data)?;
    let (per_clip, mean) = evaluate(&mut model, &clips)?;

    let mut csv = String::from("clip,mse,masked_mse,psnr_db,temporal_stability\n");
    if run.eval.per_clip {
        for (i, m) in per_clip.iter().enumerate() {
            let _ = writeln!(
                &mut csv,
                "{i},{},{},{},{}",
                m.mse, m.masked_mse, m.psnr_db, m.temporal_stability
            );
        }
    }
    let _ = writeln!(
        &mut csv,
        "mean,{},{},{},{}",
        mean.mse, mean.masked_mse, mean.psnr_db, mean.temporal_stability
    );
    if let Some(parent) = report.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(report, csv)?;
    println!(
        "eval over {} clips: mse {:.6}, masked_mse {:.6}, psnr {:.2} dB",
        per_clip.len(),
        mean.mse,
        mean.masked_mse,
        mean.psnr_db
    );
    Ok(())
}

pub fn grad_check(target: &str, dtype: &str, eps: f64) -> Result<()> {
    let report = match dtype {
        "double" => gradcheck::grad_check::<f64>(target, eps)?,
        "single" => gradcheck::grad_check::<f32>(target, eps)?,
        other => {
            return Err(Error::Config(format!(
                "--dtype must be single|double, got '{other}'"
            )))
        }
    };
    for entry in &report.entries {
        println!(
            "{:<24} {:<14} max rel err {:>10.3e}  (threshold {:.0e})  {}",
            entry.target,
            entry.group,
            entry.max_rel_err,
            entry.threshold,
            if entry.passed() { "ok" } else { "FAIL" }
        );
    }
    if report.passed() {
        println!("all {} gradient groups passed", report.entries.len());
        Ok(())
    } else {
        Err(Error::Numeric(format!(
            "gradient check failed: {:?}",
            report.worst()
        )))
    }
}

pub fn demo_data(out: &Path, clips: u32, frames: usize, dims: &str, seed: u64) -> Result<()> {
    let (h, w) = match dims.split_once('x') {
        Some((h, w)) => (
            h.parse()
                .map_err(|_| Error::Config(format!("bad dims '{dims}'")))?,
            w.parse()
                .map_err(|_| Error::Config(format!("bad dims '{dims}'")))?,
        ),
        None => return Err(Error::Config(format!("dims must be HxW, got '{dims}'"))),
    };
    for i in 0..clips {
        let clip_dir = out.join(format!("clip_{i:04}"));
        let video = synthetic_clip::<f32>(frames, h, w, Rng::derive(seed, i as u64).next_u64());
        io::write_video(&video, &clip_dir.join("frames"))?;

        let scale = (h.min(w) as f64 / 180.0).min(1.0);
        let mask_cfg = MaskVideoConfig {
            frames,
            height: h,
            width: w,
            ratio_lo: 0.1,
            ratio_hi: 0.3,
            curve: vpforge_core::mask::StrokeHyper::curve().scaled(scale.max(0.3)),
            object: vpforge_core::mask::StrokeHyper::object().scaled(scale.max(0.3)),
            seed: Rng::derive(seed ^ 0xabcd, i as u64).next_u64(),
            ..Default::default()
        };
        gen_mask_video(&mask_cfg)?.write(&clip_dir.join("masks"))?;
    }
    println!("wrote {clips} clip(s) under {}", out.display());
    Ok(())
}
