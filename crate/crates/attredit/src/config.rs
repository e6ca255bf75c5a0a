//! Model dimensions, training configuration and the flat key-value config
//! file format.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Architecture widths. Desk-scale defaults keep every gradient check and
/// toy run within CPU budgets; all fields are serialized into checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Input resolution (square).
    pub image_size: usize,
    pub image_channels: usize,
    /// Style code width, shared by both codecs.
    pub d_s: usize,
    /// Width of each noise token consumed by the mapper.
    pub d_z: usize,
    /// Number of noise tokens.
    pub l_z: usize,
    /// Patch size when tokenizing CNN features for the transformer.
    pub patch: usize,
    pub tf_depth: usize,
    pub tf_heads: usize,
    /// Transformer working width.
    pub tf_dim: usize,
    /// Semantic code width; must match the noise predictor's cond width.
    pub d_c: usize,
    /// Editor input-block channel progression (stem, down1, down2).
    pub editor_channels: [usize; 3],
    /// Channel width after the editor middle block.
    pub editor_mid: usize,
    /// AdaIN residual blocks per tag in the translator.
    pub translator_blocks: usize,
    /// Noise-predictor channel progression per resolution level.
    pub unet_channels: [usize; 3],
    /// Conditioning embedding width inside the noise predictor.
    pub unet_emb: usize,
    /// Discriminator stem width.
    pub disc_stem: usize,
    /// Discriminator down-block output widths.
    pub disc_channels: [usize; 2],
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            image_size: 32,
            image_channels: 3,
            d_s: 64,
            d_z: 32,
            l_z: 4,
            patch: 2,
            tf_depth: 2,
            tf_heads: 4,
            tf_dim: 64,
            d_c: 128,
            editor_channels: [16, 32, 48],
            editor_mid: 64,
            translator_blocks: 2,
            unet_channels: [16, 32, 48],
            unet_emb: 64,
            disc_stem: 32,
            disc_channels: [48, 64],
        }
    }
}

impl ModelDims {
    /// A reduced profile for fast unit tests.
    pub fn tiny() -> Self {
        ModelDims {
            image_size: 16,
            image_channels: 3,
            d_s: 16,
            d_z: 8,
            l_z: 2,
            patch: 2,
            tf_depth: 1,
            tf_heads: 2,
            tf_dim: 16,
            d_c: 24,
            editor_channels: [8, 12, 16],
            editor_mid: 16,
            translator_blocks: 2,
            unet_channels: [8, 12, 16],
            unet_emb: 24,
            disc_stem: 12,
            disc_channels: [16, 16],
        }
    }

    /// Spatial size of the editor feature map (two stride-2 blocks).
    pub fn feature_size(&self) -> usize {
        self.image_size / 4
    }

    /// Channel count of the editor feature map.
    pub fn feature_channels(&self) -> usize {
        self.editor_channels[2]
    }
}

/// Which component or loss term an ablation run removes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    None,
    /// Mapper keeps its transformer but drops the image-prior branch.
    NoPrior,
    /// Mapper replaced by a plain MLP over the noise tokens.
    NoPriorMapper,
    /// Extractor replaced by a CNN-only encoder (no transformer).
    NoRefineExtractor,
    /// Reconstruction loss removed.
    NoRl,
    /// Classification loss removed.
    NoCl,
    /// Adversarial loss removed (no discriminator updates).
    NoAl,
}

impl Ablation {
    pub const ALL: [Ablation; 7] = [
        Ablation::None,
        Ablation::NoPrior,
        Ablation::NoPriorMapper,
        Ablation::NoRefineExtractor,
        Ablation::NoRl,
        Ablation::NoCl,
        Ablation::NoAl,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" | "full" => Ok(Ablation::None),
            "no_prior" => Ok(Ablation::NoPrior),
            "no_priormapper" => Ok(Ablation::NoPriorMapper),
            "no_refineextractor" => Ok(Ablation::NoRefineExtractor),
            "no_rl" => Ok(Ablation::NoRl),
            "no_cl" => Ok(Ablation::NoCl),
            "no_al" => Ok(Ablation::NoAl),
            other => Err(Error::invalid(format!("unknown ablation flag '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::NoPrior => "no_prior",
            Ablation::NoPriorMapper => "no_priormapper",
            Ablation::NoRefineExtractor => "no_refineextractor",
            Ablation::NoRl => "no_rl",
            Ablation::NoCl => "no_cl",
            Ablation::NoAl => "no_al",
        }
    }
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.name())
    }
}

/// Two-phase training configuration. Defaults are the desk-scale recipe;
/// `paper_scale()` switches to the full-size values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Learning rate for the extractor, translator and discriminator.
    pub lr_main: f64,
    /// Learning rate for the mapper.
    pub lr_mapper: f64,
    /// Learning rate for phase-1 diffusion pretraining.
    pub lr_pretrain: f64,
    pub batch_size: usize,
    /// Epochs over the dataset; used when the explicit step caps are 0.
    pub epochs: usize,
    pub seed: u64,
    /// Namespaces kept bitwise frozen during editor training.
    pub freeze_namespaces: Vec<String>,
    pub ablation: Ablation,
    /// Diffusion steps of the training schedule.
    pub t_train: usize,
    /// Uniform-stride steps used for inversion/generation at evaluation.
    pub eval_steps: usize,
    /// Phase-1 step cap (0 = derive from epochs).
    pub pretrain_steps: usize,
    /// Phase-2 generator step cap (0 = derive from epochs).
    pub editor_steps: usize,
    /// Steps for the post-phase-1 attribute-classifier fit.
    pub attrcls_steps: usize,
    /// Use the saturating generator adversarial form instead of the
    /// non-saturating default.
    pub saturating_adv: bool,
    /// Synthetic dataset size when no data directory is given.
    pub dataset_size: usize,
    /// Seed for synthetic dataset generation (independent of `seed`).
    pub dataset_seed: u64,
    /// Steps for the pixel-space evaluation classifier.
    pub pixelcls_steps: usize,
    pub dims: ModelDims,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_main: 1e-4,
            lr_mapper: 1e-6,
            lr_pretrain: 2e-3,
            batch_size: 8,
            epochs: 60,
            seed: 0,
            freeze_namespaces: default_freeze(),
            ablation: Ablation::None,
            t_train: 300,
            eval_steps: 20,
            pretrain_steps: 2000,
            editor_steps: 2000,
            attrcls_steps: 300,
            saturating_adv: false,
            dataset_size: 2000,
            dataset_seed: 1000,
            pixelcls_steps: 300,
            dims: ModelDims::default(),
        }
    }
}

/// The phase-2 freeze set: the diffusion predictor plus the editor's
/// shared (non-translator) stages.
pub fn default_freeze() -> Vec<String> {
    ["unet", "editor/input", "editor/middle", "editor/out"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

impl TrainConfig {
    /// Full-size recipe: batch 16, 256x256 inputs, 60 epochs.
    pub fn paper_scale() -> Self {
        let mut c = TrainConfig::default();
        c.batch_size = 16;
        c.epochs = 60;
        c.pretrain_steps = 0;
        c.editor_steps = 0;
        c.dims.image_size = 256;
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr_main <= 0.0 || self.lr_mapper <= 0.0 || self.lr_pretrain <= 0.0 {
            return Err(Error::config("learning rates must be positive"));
        }
        if self.batch_size < 2 {
            return Err(Error::config(
                "batch_size must be >= 2 (adversarial batches need real and fake samples)",
            ));
        }
        if self.t_train == 0 {
            return Err(Error::config("t_train must be >= 1"));
        }
        if self.eval_steps == 0 || self.t_train % self.eval_steps != 0 {
            return Err(Error::config(format!(
                "eval_steps {} must evenly divide t_train {}",
                self.eval_steps, self.t_train
            )));
        }
        Ok(())
    }

    /// Write as flat `key = value` text.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("lr_main = {}\n", self.lr_main));
        s.push_str(&format!("lr_mapper = {}\n", self.lr_mapper));
        s.push_str(&format!("lr_pretrain = {}\n", self.lr_pretrain));
        s.push_str(&format!("batch_size = {}\n", self.batch_size));
        s.push_str(&format!("epochs = {}\n", self.epochs));
        s.push_str(&format!("seed = {}\n", self.seed));
        s.push_str(&format!("freeze_namespaces = {}\n", self.freeze_namespaces.join(",")));
        s.push_str(&format!("ablation = {}\n", self.ablation.name()));
        s.push_str(&format!("t_train = {}\n", self.t_train));
        s.push_str(&format!("eval_steps = {}\n", self.eval_steps));
        s.push_str(&format!("pretrain_steps = {}\n", self.pretrain_steps));
        s.push_str(&format!("editor_steps = {}\n", self.editor_steps));
        s.push_str(&format!("attrcls_steps = {}\n", self.attrcls_steps));
        s.push_str(&format!("saturating_adv = {}\n", self.saturating_adv));
        s.push_str(&format!("dataset_size = {}\n", self.dataset_size));
        s.push_str(&format!("dataset_seed = {}\n", self.dataset_seed));
        s.push_str(&format!("pixelcls_steps = {}\n", self.pixelcls_steps));
        s.push_str(&format!("image_size = {}\n", self.dims.image_size));
        s
    }

    /// Apply one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let bad = |what: &str| Error::config(format!("bad value '{v}' for key '{what}'"));
        match key.trim() {
            "lr_main" => self.lr_main = v.parse().map_err(|_| bad("lr_main"))?,
            "lr_mapper" => self.lr_mapper = v.parse().map_err(|_| bad("lr_mapper"))?,
            "lr_pretrain" => self.lr_pretrain = v.parse().map_err(|_| bad("lr_pretrain"))?,
            "batch_size" => self.batch_size = v.parse().map_err(|_| bad("batch_size"))?,
            "epochs" => self.epochs = v.parse().map_err(|_| bad("epochs"))?,
            "seed" => self.seed = v.parse().map_err(|_| bad("seed"))?,
            "freeze_namespaces" => {
                self.freeze_namespaces =
                    v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
            }
            "ablation" => self.ablation = Ablation::parse(v)?,
            "t_train" => self.t_train = v.parse().map_err(|_| bad("t_train"))?,
            "eval_steps" => self.eval_steps = v.parse().map_err(|_| bad("eval_steps"))?,
            "pretrain_steps" => self.pretrain_steps = v.parse().map_err(|_| bad("pretrain_steps"))?,
            "editor_steps" => self.editor_steps = v.parse().map_err(|_| bad("editor_steps"))?,
            "attrcls_steps" => self.attrcls_steps = v.parse().map_err(|_| bad("attrcls_steps"))?,
            "saturating_adv" => self.saturating_adv = v.parse().map_err(|_| bad("saturating_adv"))?,
            "dataset_size" => self.dataset_size = v.parse().map_err(|_| bad("dataset_size"))?,
            "dataset_seed" => self.dataset_seed = v.parse().map_err(|_| bad("dataset_seed"))?,
            "pixelcls_steps" => self.pixelcls_steps = v.parse().map_err(|_| bad("pixelcls_steps"))?,
            "image_size" => self.dims.image_size = v.parse().map_err(|_| bad("image_size"))?,
            other => return Err(Error::config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = TrainConfig::default();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("config line missing '=': {line}")))?;
            c.set(k, v)?;
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}
