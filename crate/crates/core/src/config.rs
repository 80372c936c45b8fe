//! Run configuration shared by the command-line tools.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbone::{ModelConfig, Task};
use crate::codec::PATCH_SIZE;
use crate::error::{Error, Result};
use crate::flow::TrainConfig;
use crate::maa::MaaConfig;
use crate::pipelines::DEFAULT_STEPS;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub image_size: usize,
    /// Codec patch; only 2 is supported.
    pub patch_size: usize,
    /// Latent cells merged into one backbone token per side.
    pub token_patch: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub mlp_ratio: usize,
    pub noise_skip: bool,
    /// Per-cell head width; 0 disables it.
    pub cell_head: usize,
    /// Map-aware attention for inverse rendering.
    pub maa: bool,
    pub maa_queries: usize,
    pub maa_enc_channels: [usize; 3],
    pub lr: f32,
    pub warmup: u64,
    pub min_lr_ratio: f32,
    pub clip_norm: f32,
    pub batch: usize,
    pub steps: u64,
    pub seed: u64,
    pub p_drop: f32,
    pub aux_weight: f32,
    pub sampler_steps: usize,
    pub checkpoint_every: u64,
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl Default for RunConfig {
    /// The desk configuration: 64 px images, d_model 192, 6 layers, 6 heads.
    fn default() -> Self {
        let tc = TrainConfig::default();
        let maa = MaaConfig::default();
        Self {
            image_size: 64,
            patch_size: PATCH_SIZE,
            token_patch: 2,
            d_model: 192,
            n_layers: 6,
            n_heads: 6,
            mlp_ratio: 4,
            noise_skip: true,
            cell_head: 64,
            maa: true,
            maa_queries: maa.queries,
            maa_enc_channels: maa.enc_channels,
            lr: tc.lr,
            warmup: tc.warmup,
            min_lr_ratio: tc.min_lr_ratio,
            clip_norm: tc.clip_norm,
            batch: tc.batch,
            steps: tc.steps,
            seed: tc.seed,
            p_drop: tc.p_drop,
            aux_weight: tc.aux_weight,
            sampler_steps: DEFAULT_STEPS,
            checkpoint_every: tc.checkpoint_every,
            dataset: None,
            checkpoint: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("image_size", self.image_size),
            ("patch_size", self.patch_size),
            ("token_patch", self.token_patch),
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("mlp_ratio", self.mlp_ratio),
            ("batch", self.batch),
            ("sampler_steps", self.sampler_steps),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.steps == 0 {
            return Err(Error::Config("steps must be positive".into()));
        }
        if self.patch_size != PATCH_SIZE {
            return Err(Error::Config(format!("patch_size must be {PATCH_SIZE}")));
        }
        if self.image_size % self.patch_size != 0 {
            return Err(Error::Config(format!(
                "image_size {} is not divisible by patch_size {}",
                self.image_size, self.patch_size
            )));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config("lr must be positive".into()));
        }
        self.model_config(Task::Ir)?;
        self.model_config(Task::Fr)?;
        self.train_config().validate()
    }

    /// Architecture for `task`. Map-aware attention only applies to
    /// inverse rendering.
    pub fn model_config(&self, task: Task) -> Result<ModelConfig> {
        let maa = (self.maa && task == Task::Ir).then(|| MaaConfig {
            enc_channels: self.maa_enc_channels,
            queries: self.maa_queries,
            ..MaaConfig::default()
        });
        let mut cfg = ModelConfig::new(task, self.image_size, self.d_model, self.n_layers, self.n_heads, self.token_patch, maa);
        cfg.backbone.mlp_ratio = self.mlp_ratio;
        cfg.backbone.noise_skip = self.noise_skip;
        cfg.backbone.cell_head = self.cell_head;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            steps: self.steps,
            batch: self.batch,
            lr: self.lr,
            warmup: self.warmup,
            min_lr_ratio: self.min_lr_ratio,
            seed: self.seed,
            aux_weight: self.aux_weight,
            p_drop: self.p_drop,
            checkpoint_every: self.checkpoint_every,
            clip_norm: self.clip_norm,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}
