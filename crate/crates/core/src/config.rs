//! Run configuration: one JSON document with sections for mask generation,
//! model architecture, losses, training, and evaluation. Unknown keys are
//! rejected everywhere and the schema version is mandatory.

use crate::error::{Error, Result};
use crate::loss::{FeatureExtractorConfig, HingeForm, LossWeights, StyleNorm};
use crate::mask::MaskVideoConfig;
use crate::model::ModelConfig;
use crate::tensor::Dtype;
use crate::train::{AdamConfig, TrainConfig};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskSection {
    pub gen: MaskVideoConfig,
    /// Videos to emit per gen-masks invocation.
    pub count: u32,
    /// Upsampling factor for super-resolution masks.
    pub sr_factor: usize,
    /// Keep every k-th frame in interpolation masks.
    pub interp_keep_every: usize,
}

impl Default for MaskSection {
    fn default() -> Self {
        MaskSection {
            gen: MaskVideoConfig::default(),
            count: 1,
            sr_factor: 4,
            interp_keep_every: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    pub weights: LossWeights,
    pub hinge: HingeForm,
    pub style_norm: StyleNorm,
    pub extractor: FeatureExtractorConfig,
}

impl Default for LossSection {
    fn default() -> Self {
        LossSection {
            weights: LossWeights::default(),
            hinge: HingeForm::Standard,
            style_norm: StyleNorm::Printed,
            extractor: FeatureExtractorConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub iterations: u32,
    pub batch_size: usize,
    pub clip_len: usize,
    pub crop_h: usize,
    pub crop_w: usize,
    pub seed: u64,
    pub dtype: Dtype,
    pub optimizer: AdamConfig,
    pub train_d: bool,
    pub checkpoint_every: u32,
    pub log_every: u32,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            iterations: t.iterations,
            batch_size: t.batch_size,
            clip_len: t.clip_len,
            crop_h: t.crop_h,
            crop_w: t.crop_w,
            seed: t.seed,
            dtype: t.dtype,
            optimizer: t.optimizer,
            train_d: t.train_d,
            checkpoint_every: t.checkpoint_every,
            log_every: t.log_every,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Emit one CSV row per clip in addition to the mean row.
    pub per_clip: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { per_clip: true }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default)]
    pub masks: MaskSection,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub losses: LossSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            masks: MaskSection::default(),
            model: ModelConfig::default(),
            losses: LossSection::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        if cfg.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                cfg.version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Merge the train and losses sections into the training-loop config.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            iterations: self.train.iterations,
            batch_size: self.train.batch_size,
            clip_len: self.train.clip_len,
            crop_h: self.train.crop_h,
            crop_w: self.train.crop_w,
            seed: self.train.seed,
            dtype: self.train.dtype,
            optimizer: self.train.optimizer,
            weights: self.losses.weights,
            hinge: self.losses.hinge,
            style_norm: self.losses.style_norm,
            train_d: self.train.train_d,
            checkpoint_every: self.train.checkpoint_every,
            log_every: self.train.log_every,
        }
    }
}
