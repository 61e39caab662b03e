//! Procedural free-form video masks.
//!
//! Three mask families: curve-like strokes, object-like blobs, and moving
//! bounding boxes, all with per-frame motion (velocity, acceleration) and
//! random deformation. A generated video targets a mask-to-frame ratio bucket
//! via rejection sampling: strokes are added until the mean ratio enters the
//! bucket, and the whole video is redrawn with fresh parameters if it
//! overshoots. Structured masks for super-resolution and frame interpolation
//! live here too.

pub mod stroke;

pub use stroke::{
    evolve_stroke, init_stroke, rasterize_stroke, StrokeBounds, StrokeHyper, StrokeState,
};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Dims5, Scalar, Tensor5};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskType {
    Curve,
    Object,
    Bbox,
}

impl std::str::FromStr for MaskType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "curve" => Ok(MaskType::Curve),
            "object" => Ok(MaskType::Object),
            "bbox" => Ok(MaskType::Bbox),
            other => Err(Error::Config(format!("unknown mask type '{other}'"))),
        }
    }
}

/// The seven standard ratio buckets, 0-10% through 60-70%.
pub const RATIO_BUCKETS: [(f64, f64); 7] = [
    (0.0, 0.1),
    (0.1, 0.2),
    (0.2, 0.3),
    (0.3, 0.4),
    (0.4, 0.5),
    (0.5, 0.6),
    (0.6, 0.7),
];

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskVideoConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub mask_type: MaskType,
    pub ratio_lo: f64,
    pub ratio_hi: f64,
    pub border_constraint: bool,
    pub margin: usize,
    /// Upper bound on strokes per attempt; drawing stops early once the
    /// ratio bucket is reached.
    pub max_strokes: usize,
    pub max_attempts: u32,
    pub curve: StrokeHyper,
    pub object: StrokeHyper,
    pub seed: u64,
}

impl Default for MaskVideoConfig {
    fn default() -> Self {
        MaskVideoConfig {
            frames: 8,
            height: 180,
            width: 320,
            mask_type: MaskType::Curve,
            ratio_lo: 0.0,
            ratio_hi: 0.1,
            border_constraint: false,
            margin: 8,
            max_strokes: 96,
            max_attempts: 1000,
            curve: StrokeHyper::curve(),
            object: StrokeHyper::object(),
            seed: 0,
        }
    }
}

impl MaskVideoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::Config("mask dims must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.ratio_lo)
            || self.ratio_hi <= self.ratio_lo
            || self.ratio_hi > 1.0
        {
            return Err(Error::Config(format!(
                "ratio bucket must satisfy 0 <= lo < hi <= 1, got [{}, {}]",
                self.ratio_lo, self.ratio_hi
            )));
        }
        if self.border_constraint && 2 * self.margin >= self.height.min(self.width) {
            return Err(Error::Config(format!(
                "margin {} too large for {}x{} frames",
                self.margin, self.height, self.width
            )));
        }
        Ok(())
    }

    fn bounds(&self) -> StrokeBounds {
        StrokeBounds {
            height: self.height,
            width: self.width,
            margin: self.border_constraint.then_some(self.margin),
        }
    }
}

/// A generated binary mask video: per-frame 0/1 bytes plus its measured ratio.
#[derive(Debug, Clone)]
pub struct MaskVideo {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// frames * height * width bytes, each 0 or 1.
    pub data: Vec<u8>,
    /// Mean mask-to-frame ratio over frames.
    pub ratio: f64,
    /// Rejection-sampling attempts consumed (1 = first draw accepted).
    pub attempts: u32,
}

impl MaskVideo {
    fn new(frames: usize, height: usize, width: usize, data: Vec<u8>, attempts: u32) -> Self {
        let covered = data.iter().filter(|&&b| b != 0).count();
        let ratio = covered as f64 / data.len() as f64;
        MaskVideo {
            frames,
            height,
            width,
            data,
            ratio,
            attempts,
        }
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor5<T> {
        let dims = Dims5::new(1, 1, self.frames, self.height, self.width);
        Tensor5::from_vec(
            dims,
            self.data
                .iter()
                .map(|&b| if b != 0 { T::one() } else { T::zero() })
                .collect(),
        )
        .expect("mask buffer length matches dims")
    }

    pub fn write(&self, dir: &std::path::Path) -> Result<()> {
        crate::io::write_mask(&self.to_tensor::<f32>(), dir)
    }

    /// Pixels set anywhere in the border zone of the given margin.
    pub fn border_violations(&self, margin: usize) -> usize {
        let mut count = 0;
        for t in 0..self.frames {
            for y in 0..self.height {
                for x in 0..self.width {
                    let in_border = y < margin
                        || x < margin
                        || y >= self.height - margin
                        || x >= self.width - margin;
                    if in_border && self.data[(t * self.height + y) * self.width + x] != 0 {
                        count += 1;
                    }
                }
            }
        }
        count
    }
}

/// Fraction of masked voxels. Input must be binary.
pub fn mask_ratio<T: Scalar>(mask: &Tensor5<T>) -> Result<f64> {
    let mut masked = 0usize;
    for &v in mask.data() {
        match v.as_f64() {
            0.0 => {}
            1.0 => masked += 1,
            v => return Err(Error::NonBinaryMask(v)),
        }
    }
    Ok(masked as f64 / mask.len() as f64)
}

fn try_strokes(cfg: &MaskVideoConfig, rng: &mut Rng) -> Option<Vec<u8>> {
    let hyper = match cfg.mask_type {
        MaskType::Curve => &cfg.curve,
        MaskType::Object => &cfg.object,
        MaskType::Bbox => unreachable!("bbox masks use try_bbox"),
    };
    let bounds = cfg.bounds();
    let frame_px = cfg.height * cfg.width;
    let total_px = cfg.frames * frame_px;
    let mut data = vec![0u8; total_px];
    let mut covered = 0usize;

    for _ in 0..cfg.max_strokes {
        let mut state = init_stroke(rng, hyper, &bounds);
        for t in 0..cfg.frames {
            if t > 0 {
                state = evolve_stroke(&state, rng, &bounds);
            }
            covered += rasterize_stroke(
                &state,
                cfg.height,
                cfg.width,
                &mut data[t * frame_px..(t + 1) * frame_px],
            );
        }
        let ratio = covered as f64 / total_px as f64;
        if ratio > cfg.ratio_hi {
            return None; // overshot the bucket; redraw everything
        }
        if ratio >= cfg.ratio_lo && ratio > 0.0 {
            return Some(data);
        }
    }
    None
}

fn try_bbox(cfg: &MaskVideoConfig, rng: &mut Rng) -> Option<Vec<u8>> {
    let (h, w) = (cfg.height as f64, cfg.width as f64);
    let margin = if cfg.border_constraint { cfg.margin } else { 0 };
    let avail_w = cfg.width.saturating_sub(2 * margin);
    let avail_h = cfg.height.saturating_sub(2 * margin);
    if avail_w == 0 || avail_h == 0 {
        return None;
    }

    // Pick integer box dims whose exact area fraction lands in the bucket.
    let target = rng.range(cfg.ratio_lo.max(1e-4), cfg.ratio_hi);
    let aspect = rng.range(0.5, 2.0);
    let mut bh = ((target * h * w / aspect).sqrt().round() as usize).clamp(1, avail_h);
    let bw = ((target * h * w / bh as f64).round() as usize).clamp(1, avail_w);
    bh = ((target * h * w / bw as f64).round() as usize).clamp(1, avail_h);
    let ratio = (bh * bw) as f64 / (h * w);
    if ratio < cfg.ratio_lo || ratio > cfg.ratio_hi {
        return None;
    }

    let x_hi = (avail_w - bw) as f64;
    let y_hi = (avail_h - bh) as f64;
    let mut x = margin as f64 + rng.range(0.0, x_hi.max(1e-9));
    let mut y = margin as f64 + rng.range(0.0, y_hi.max(1e-9));
    let mut vel = (rng.normal(1.5), rng.normal(1.5));
    let acc = (rng.normal(0.3), rng.normal(0.3));

    let frame_px = cfg.height * cfg.width;
    let mut data = vec![0u8; cfg.frames * frame_px];
    for t in 0..cfg.frames {
        if t > 0 {
            vel.0 += acc.0;
            vel.1 += acc.1;
            x = (x + vel.0).clamp(margin as f64, margin as f64 + x_hi);
            y = (y + vel.1).clamp(margin as f64, margin as f64 + y_hi);
        }
        let (x0, y0) = (x.round() as usize, y.round() as usize);
        for yy in y0..y0 + bh {
            let row = t * frame_px + yy * cfg.width;
            data[row + x0..row + x0 + bw].fill(1);
        }
    }
    Some(data)
}

/// Generate one mask video whose mean ratio lies in the configured bucket.
/// Deterministic in `cfg.seed`; fails only if the bucket is not reached
/// within `max_attempts` redraws.
pub fn gen_mask_video(cfg: &MaskVideoConfig) -> Result<MaskVideo> {
    cfg.validate()?;
    let mut rng = Rng::from_seed(cfg.seed);
    for attempt in 1..=cfg.max_attempts {
        let data = match cfg.mask_type {
            MaskType::Bbox => try_bbox(cfg, &mut rng),
            _ => try_strokes(cfg, &mut rng),
        };
        if let Some(data) = data {
            let video = MaskVideo::new(cfg.frames, cfg.height, cfg.width, data, attempt);
            // post-checks on the promised guarantees
            if video.ratio < cfg.ratio_lo || video.ratio > cfg.ratio_hi {
                return Err(Error::Numeric(format!(
                    "generated ratio {} escaped bucket [{}, {}]",
                    video.ratio, cfg.ratio_lo, cfg.ratio_hi
                )));
            }
            if cfg.border_constraint {
                let violations = video.border_violations(cfg.margin);
                if violations != 0 {
                    return Err(Error::Numeric(format!(
                        "{violations} masked pixels inside the {}-px border",
                        cfg.margin
                    )));
                }
            }
            return Ok(video);
        }
    }
    Err(Error::BucketUnreachable {
        lo: cfg.ratio_lo,
        hi: cfg.ratio_hi,
        attempts: cfg.max_attempts,
    })
}

/// Super-resolution mask for factor K: pixel (x, y) is masked in every frame
/// unless both x and y are multiples of K.
pub fn gen_sr_mask(frames: usize, height: usize, width: usize, factor: usize) -> Result<MaskVideo> {
    if factor == 0 {
        return Err(Error::Config("sr factor must be >= 1".into()));
    }
    if frames == 0 || height == 0 || width == 0 {
        return Err(Error::Config("mask dims must be positive".into()));
    }
    let mut data = vec![0u8; frames * height * width];
    for t in 0..frames {
        for y in 0..height {
            for x in 0..width {
                if x % factor != 0 || y % factor != 0 {
                    data[(t * height + y) * width + x] = 1;
                }
            }
        }
    }
    Ok(MaskVideo::new(frames, height, width, data, 1))
}

/// Frame-interpolation mask: frame t is fully masked unless t is a multiple
/// of `keep_every`.
pub fn gen_interp_mask(
    frames: usize,
    height: usize,
    width: usize,
    keep_every: usize,
) -> Result<MaskVideo> {
    if keep_every == 0 {
        return Err(Error::Config("keep_every must be >= 1".into()));
    }
    if frames == 0 || height == 0 || width == 0 {
        return Err(Error::Config("mask dims must be positive".into()));
    }
    let mut data = vec![0u8; frames * height * width];
    let frame_px = height * width;
    for t in 0..frames {
        if t % keep_every != 0 {
            data[t * frame_px..(t + 1) * frame_px].fill(1);
        }
    }
    Ok(MaskVideo::new(frames, height, width, data, 1))
}
