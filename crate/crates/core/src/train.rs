//! Desk-scale adversarial training: Adam, the alternating D/G step, the
//! training loop with CSV-ready logging, and evaluation metrics.

use crate::error::{Error, Result};
use crate::loss::{gan_d_loss, total_loss, FeatureExtractor, HingeForm, LossWeights, StyleNorm};
use crate::model::{composite, make_masked_input, mask_mul, ModelState};
use crate::nn::SnMode;
use crate::rng::Rng;
use crate::tensor::{Dims5, Dtype, Scalar, Tensor5};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.9,
            eps: 1e-8,
        }
    }
}

/// Per-parameter first/second moment buffers plus the shared step counter.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub cfg: AdamConfig,
    pub step: u64,
    moments: BTreeMap<String, (Vec<T>, Vec<T>)>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(cfg: AdamConfig) -> Self {
        AdamState {
            cfg,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    /// One bias-corrected update over named (parameter, gradient) pairs.
    /// Rejects non-finite gradients before touching any parameter.
    pub fn step(&mut self, entries: &mut [(String, &mut [T], &[T])]) -> Result<()> {
        for (name, param, grad) in entries.iter() {
            if param.len() != grad.len() {
                return Err(Error::shape("adam_step", param.len(), grad.len()));
            }
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient in '{name}'")));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bias1 = 1.0 - b1.powi(t);
        let bias2 = 1.0 - b2.powi(t);
        let lr = self.cfg.lr;
        let eps = self.cfg.eps;

        for (name, param, grad) in entries.iter_mut() {
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![T::zero(); param.len()], vec![T::zero(); param.len()]));
            if m.len() != param.len() {
                return Err(Error::shape("adam moment buffer", param.len(), m.len()));
            }
            for i in 0..param.len() {
                let g = grad[i].as_f64();
                let mi = b1 * m[i].as_f64() + (1.0 - b1) * g;
                let vi = b2 * v[i].as_f64() + (1.0 - b2) * g * g;
                m[i] = T::of_f64(mi);
                v[i] = T::of_f64(vi);
                let m_hat = mi / bias1;
                let v_hat = vi / bias2;
                let delta = lr * m_hat / (v_hat.sqrt() + eps);
                param[i] = T::of_f64(param[i].as_f64() - delta);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iterations: u32,
    pub batch_size: usize,
    pub clip_len: usize,
    pub crop_h: usize,
    pub crop_w: usize,
    pub seed: u64,
    pub dtype: Dtype,
    pub optimizer: AdamConfig,
    pub weights: LossWeights,
    pub hinge: HingeForm,
    pub style_norm: StyleNorm,
    /// Update the discriminator each step. Turning this off freezes D.
    pub train_d: bool,
    pub checkpoint_every: u32,
    pub log_every: u32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 500,
            batch_size: 1,
            clip_len: 16,
            crop_h: 64,
            crop_w: 64,
            seed: 0,
            dtype: Dtype::Single,
            optimizer: AdamConfig::default(),
            weights: LossWeights::default(),
            hinge: HingeForm::Standard,
            style_norm: StyleNorm::Printed,
            train_d: true,
            checkpoint_every: 100,
            log_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.crop_h.is_multiple_of(4)
            || !self.crop_w.is_multiple_of(4)
            || self.crop_h == 0
            || self.crop_w == 0
        {
            return Err(Error::Config(format!(
                "crop dims must be positive multiples of 4, got {}x{}",
                self.crop_h, self.crop_w
            )));
        }
        // The discriminator's temporal receptive field spans 13 frames.
        if self.clip_len < 13 {
            return Err(Error::Config(format!(
                "clip_len must be >= 13 (discriminator temporal receptive field), got {}",
                self.clip_len
            )));
        }
        if self.batch_size == 0 || self.iterations == 0 {
            return Err(Error::Config(
                "batch_size and iterations must be positive".into(),
            ));
        }
        self.weights.validate()
    }
}

/// Scalar losses measured during one training step.
#[derive(Debug, Clone, Copy)]
pub struct StepLosses {
    pub d_loss: f64,
    pub total: f64,
    pub l1: f64,
    pub l1_mask: f64,
    pub perceptual: f64,
    pub style: f64,
    pub gan_g: f64,
}

/// One alternating update: forward the generator, one Adam step on the
/// discriminator against (real video, composited fake), then one Adam step
/// on the generator against the full objective with fresh fake scores.
#[allow(clippy::too_many_arguments)]
pub fn train_step<T: Scalar>(
    model: &mut ModelState<T>,
    video: &Tensor5<T>,
    mask: &Tensor5<T>,
    fe: &FeatureExtractor<T>,
    weights: &LossWeights,
    hinge: HingeForm,
    style_norm: StyleNorm,
    opt_g: &mut AdamState<T>,
    opt_d: &mut AdamState<T>,
    train_d: bool,
) -> Result<StepLosses> {
    let input = make_masked_input(video, mask)?;
    let (output, g_cache) = model.generator.forward(&input, SnMode::Update)?;
    let composited = composite(&output, video, mask)?;

    // Discriminator step on detached composite.
    let mut d_loss = 0.0;
    if train_d {
        let (s_real, c_real) = model.discriminator.forward(video, SnMode::Update)?;
        let (s_fake, c_fake) = model.discriminator.forward(&composited, SnMode::Update)?;
        let (loss, g_real, g_fake) = gan_d_loss(&s_real, &s_fake, hinge);
        d_loss = loss.as_f64();
        if !d_loss.is_finite() {
            return Err(Error::Numeric(format!("discriminator loss is {d_loss}")));
        }
        let gr = model.discriminator.backward(&g_real, &c_real)?;
        let gf = model.discriminator.backward(&g_fake, &c_fake)?;
        let mut summed = gr;
        for (a, b) in summed.layers.iter_mut().zip(gf.layers) {
            a.0.add_scaled(&b.0, T::one())?;
            for (x, y) in a.1.iter_mut().zip(b.1) {
                *x += y;
            }
        }
        let grads = model.discriminator.grad_entries(&summed);
        let mut params = model.discriminator.param_entries_mut();
        let mut joined = join_entries(&mut params, &grads)?;
        opt_d.step(&mut joined)?;
    }

    // Generator step with fresh fake scores from the updated discriminator.
    let want_scores = weights.gan != 0.0;
    let (scores_fake, d_cache) = if want_scores {
        let (s, c) = model.discriminator.forward(&composited, SnMode::Update)?;
        (Some(s), Some(c))
    } else {
        (None, None)
    };
    let tl = total_loss(
        &output,
        video,
        mask,
        fe,
        weights,
        scores_fake.as_ref(),
        style_norm,
    )?;
    if !tl.total.is_finite() {
        return Err(Error::Numeric(format!("generator loss is {}", tl.total)));
    }
    let mut grad_output = tl.grad_output.clone();
    if let (Some(gs), Some(cache)) = (tl.grad_scores_fake.as_ref(), d_cache.as_ref()) {
        // The GAN term sees composite(O) = M*O + (1-M)*V, so dC/dO = M.
        let into_c = model.discriminator.backward_input(gs, cache)?;
        grad_output.add_scaled(&mask_mul(&into_c, mask)?, T::one())?;
    }
    let g_grads = model.generator.backward(&grad_output, &g_cache)?;
    {
        let grads = model.generator.grad_entries(&g_grads);
        let mut params = model.generator.param_entries_mut();
        let mut joined = join_entries(&mut params, &grads)?;
        opt_g.step(&mut joined)?;
    }
    model.assert_params_finite()?;
    model.step += 1;

    Ok(StepLosses {
        d_loss,
        total: tl.total.as_f64(),
        l1: tl.l1.as_f64(),
        l1_mask: tl.l1_mask.as_f64(),
        perceptual: tl.perceptual.as_f64(),
        style: tl.style.as_f64(),
        gan_g: tl.gan_g.as_f64(),
    })
}

type AdamEntries<'a, T> = Vec<(String, &'a mut [T], &'a [T])>;

fn join_entries<'a, T: Scalar>(
    params: &'a mut [(String, &'a mut [T])],
    grads: &'a [(String, &'a [T])],
) -> Result<AdamEntries<'a, T>> {
    if params.len() != grads.len() {
        return Err(Error::shape(
            "parameter/gradient count",
            grads.len(),
            params.len(),
        ));
    }
    params
        .iter_mut()
        .zip(grads.iter())
        .map(|((pn, p), (gn, g))| {
            if pn != gn {
                return Err(Error::Config(format!(
                    "parameter/gradient name mismatch: '{pn}' vs '{gn}'"
                )));
            }
            Ok((pn.clone(), &mut **p, *g))
        })
        .collect()
}

/// A (video, mask) clip pair kept in memory.
pub type ClipPair<T> = (Tensor5<T>, Tensor5<T>);

/// Load every clip directory under `root`. Each clip is a directory holding
/// `frames/` (frame_%05d.ppm) and `masks/` (mask_%05d.pgm) with matching
/// frame counts and dims.
pub fn load_dataset<T: Scalar>(root: &Path) -> Result<Vec<ClipPair<T>>> {
    let mut dirs: Vec<_> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::format(root.display(), "no clip directories found"));
    }
    let mut clips = Vec::with_capacity(dirs.len());
    for dir in dirs {
        let video = crate::io::read_video(&dir.join("frames"))?;
        let mask = crate::io::read_mask(&dir.join("masks"))?;
        let (vd, md) = (video.dims(), mask.dims());
        if (vd.t, vd.h, vd.w) != (md.t, md.h, md.w) {
            return Err(Error::shape("dataset clip", vd, md));
        }
        clips.push((video, mask));
    }
    Ok(clips)
}

fn crop<T: Scalar>(
    x: &Tensor5<T>,
    t0: usize,
    t_len: usize,
    y0: usize,
    h: usize,
    x0: usize,
    w: usize,
) -> Tensor5<T> {
    let d = x.dims();
    let mut out = Tensor5::zeros(Dims5::new(d.n, d.c, t_len, h, w));
    for n in 0..d.n {
        for c in 0..d.c {
            for t in 0..t_len {
                for y in 0..h {
                    let src = x.index(n, c, t0 + t, y0 + y, x0);
                    let dst = out.index(n, c, t, y, 0);
                    out.data_mut()[dst..dst + w].copy_from_slice(&x.data()[src..src + w]);
                }
            }
        }
    }
    out
}

/// Draw a training batch: random clip, temporal window, and spatial crop.
pub fn sample_batch<T: Scalar>(
    clips: &[ClipPair<T>],
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<ClipPair<T>> {
    let mut videos = Vec::with_capacity(cfg.batch_size);
    let mut masks = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.batch_size {
        let (video, mask) = &clips[rng.range_usize(0, clips.len() - 1)];
        let d = video.dims();
        if d.t < cfg.clip_len || d.h < cfg.crop_h || d.w < cfg.crop_w {
            return Err(Error::shape(
                "sample_batch clip too small",
                format!("at least {}x{}x{}", cfg.clip_len, cfg.crop_h, cfg.crop_w),
                format!("{}x{}x{}", d.t, d.h, d.w),
            ));
        }
        let t0 = rng.range_usize(0, d.t - cfg.clip_len);
        let y0 = rng.range_usize(0, d.h - cfg.crop_h);
        let x0 = rng.range_usize(0, d.w - cfg.crop_w);
        videos.push(crop(
            video,
            t0,
            cfg.clip_len,
            y0,
            cfg.crop_h,
            x0,
            cfg.crop_w,
        ));
        masks.push(crop(mask, t0, cfg.clip_len, y0, cfg.crop_h, x0, cfg.crop_w));
    }
    Ok((stack_batch(&videos)?, stack_batch(&masks)?))
}

fn stack_batch<T: Scalar>(items: &[Tensor5<T>]) -> Result<Tensor5<T>> {
    let d = items[0].dims();
    let mut data = Vec::with_capacity(items.len() * d.len());
    for item in items {
        if item.dims() != d {
            return Err(Error::shape("stack_batch", d, item.dims()));
        }
        data.extend_from_slice(item.data());
    }
    Tensor5::from_vec(Dims5::new(items.len() * d.n, d.c, d.t, d.h, d.w), data)
}

/// One row of the training log.
#[derive(Debug, Clone)]
pub struct TrainLogRow {
    pub iteration: u32,
    pub losses: StepLosses,
    pub wall_time_s: f64,
}

pub const TRAIN_CSV_HEADER: &str =
    "iteration,d_loss,total,l1,l1_mask,perceptual,style,gan_g,wall_time_s";

impl TrainLogRow {
    pub fn to_csv(&self) -> String {
        let l = &self.losses;
        format!(
            "{},{},{},{},{},{},{},{},{:.3}",
            self.iteration,
            l.d_loss,
            l.total,
            l.l1,
            l.l1_mask,
            l.perceptual,
            l.style,
            l.gan_g,
            self.wall_time_s
        )
    }
}

/// Run the training loop over an in-memory dataset. Checkpoints land in
/// `ckpt_dir` every `checkpoint_every` iterations plus once at the end.
pub fn run_training<T: Scalar>(
    model: &mut ModelState<T>,
    fe: &FeatureExtractor<T>,
    clips: &[ClipPair<T>],
    cfg: &TrainConfig,
    ckpt_dir: Option<&Path>,
) -> Result<Vec<TrainLogRow>> {
    cfg.validate()?;
    if clips.is_empty() {
        return Err(Error::Config("empty dataset".into()));
    }
    let mut rng = Rng::derive(cfg.seed, 0x7261_696e);
    let mut opt_g = AdamState::new(cfg.optimizer);
    let mut opt_d = AdamState::new(cfg.optimizer);
    let mut log = Vec::new();
    let start = std::time::Instant::now();

    for iter in 1..=cfg.iterations {
        let (video, mask) = sample_batch(clips, cfg, &mut rng)?;
        let losses = train_step(
            model,
            &video,
            &mask,
            fe,
            &cfg.weights,
            cfg.hinge,
            cfg.style_norm,
            &mut opt_g,
            &mut opt_d,
            cfg.train_d,
        )
        .map_err(|e| Error::Numeric(format!("iteration {iter}: {e}")))?;
        if iter % cfg.log_every == 0 || iter == cfg.iterations {
            log.push(TrainLogRow {
                iteration: iter,
                losses,
                wall_time_s: start.elapsed().as_secs_f64(),
            });
        }
        if let Some(dir) = ckpt_dir {
            if iter % cfg.checkpoint_every == 0 || iter == cfg.iterations {
                std::fs::create_dir_all(dir)?;
                model.save(&dir.join(format!("ckpt_{iter:06}.vpf")))?;
            }
        }
    }
    Ok(log)
}

/// Evaluation metrics over composited outputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalMetrics {
    pub mse: f64,
    pub masked_mse: f64,
    pub psnr_db: f64,
    pub temporal_stability: f64,
}

pub const PSNR_CAP_DB: f64 = 99.0;

/// Metrics for one clip: mean square error over all voxels of the composited
/// output (unmasked voxels contribute exactly zero), MSE over masked voxels
/// only, PSNR on the [-1, 1] range capped at 99 dB, and the mean absolute
/// difference of consecutive residual frames as a flicker proxy.
pub fn clip_metrics<T: Scalar>(
    composited: &Tensor5<T>,
    video: &Tensor5<T>,
    mask: &Tensor5<T>,
) -> Result<EvalMetrics> {
    if composited.dims() != video.dims() {
        return Err(Error::shape(
            "clip_metrics",
            video.dims(),
            composited.dims(),
        ));
    }
    let d = video.dims();
    let vol = d.voxels();
    let hw = d.spatial();
    let mut sq_sum = 0.0f64;
    let mut masked_sq_sum = 0.0f64;
    let mut masked_count = 0.0f64;
    let mut flicker_sum = 0.0f64;

    for n in 0..d.n {
        let m_frame = &mask.data()[n * vol..(n + 1) * vol];
        for c in 0..d.c {
            let base = (n * d.c + c) * vol;
            for i in 0..vol {
                let r = (composited.data()[base + i] - video.data()[base + i]).as_f64();
                sq_sum += r * r;
                if m_frame[i] != T::zero() {
                    masked_sq_sum += r * r;
                    masked_count += 1.0;
                }
                // residual difference to the same pixel one frame earlier
                if i >= hw {
                    let r_prev =
                        (composited.data()[base + i - hw] - video.data()[base + i - hw]).as_f64();
                    flicker_sum += (r - r_prev).abs();
                }
            }
        }
    }
    let total = (d.n * d.c * vol) as f64;
    let mse = sq_sum / total;
    let flicker_terms = (d.n * d.c * (d.t.saturating_sub(1)) * hw) as f64;
    Ok(EvalMetrics {
        mse,
        masked_mse: if masked_count > 0.0 {
            masked_sq_sum / masked_count
        } else {
            0.0
        },
        psnr_db: if mse > 0.0 {
            (10.0 * (4.0 / mse).log10()).min(PSNR_CAP_DB)
        } else {
            PSNR_CAP_DB
        },
        temporal_stability: if flicker_terms > 0.0 {
            flicker_sum / flicker_terms
        } else {
            0.0
        },
    })
}

/// Run the generator over each clip, composite, and report per-clip metrics
/// plus the dataset mean. Uses frozen spectral-norm state, so evaluation
/// never mutates the model.
pub fn evaluate<T: Scalar>(
    model: &mut ModelState<T>,
    clips: &[ClipPair<T>],
) -> Result<(Vec<EvalMetrics>, EvalMetrics)> {
    if clips.is_empty() {
        return Err(Error::Config("empty evaluation dataset".into()));
    }
    let mut per_clip = Vec::with_capacity(clips.len());
    for (video, mask) in clips {
        let input = make_masked_input(video, mask)?;
        let (output, _) = model.generator.forward(&input, SnMode::Frozen)?;
        let composited = composite(&output, video, mask)?;
        per_clip.push(clip_metrics(&composited, video, mask)?);
    }
    let n = per_clip.len() as f64;
    let mean = EvalMetrics {
        mse: per_clip.iter().map(|m| m.mse).sum::<f64>() / n,
        masked_mse: per_clip.iter().map(|m| m.masked_mse).sum::<f64>() / n,
        psnr_db: per_clip.iter().map(|m| m.psnr_db).sum::<f64>() / n,
        temporal_stability: per_clip.iter().map(|m| m.temporal_stability).sum::<f64>() / n,
    };
    Ok((per_clip, mean))
}
