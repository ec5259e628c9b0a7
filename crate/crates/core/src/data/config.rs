use super::{DataError, Result};
use serde::{Deserialize, Serialize};
use std::fmt;

/// Backbone size presets. All scales share pre-norm blocks, four register
/// tokens, and four tap layers feeding the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneScale {
    Toy,
    Small,
    Base,
    Large,
}

impl BackboneScale {
    pub fn embed_dim(self) -> usize {
        match self {
            BackboneScale::Toy => 32,
            BackboneScale::Small => 384,
            BackboneScale::Base => 768,
            BackboneScale::Large => 1024,
        }
    }

    pub fn depth(self) -> usize {
        match self {
            BackboneScale::Toy => 8,
            BackboneScale::Small | BackboneScale::Base => 12,
            BackboneScale::Large => 24,
        }
    }

    pub fn heads(self) -> usize {
        match self {
            BackboneScale::Toy => 4,
            BackboneScale::Small => 6,
            BackboneScale::Base => 12,
            BackboneScale::Large => 16,
        }
    }

    pub fn patch_size(self) -> usize {
        match self {
            BackboneScale::Toy => 8,
            _ => 14,
        }
    }

    /// Decoder fusion width.
    pub fn fusion_width(self) -> usize {
        match self {
            BackboneScale::Toy => 64,
            _ => 256,
        }
    }

    /// 1-based transformer layers whose outputs feed the decoder, evenly
    /// spaced up to the final layer.
    pub fn pick_layers(self) -> [usize; 4] {
        let d = self.depth();
        [d / 4, d / 2, 3 * d / 4, d]
    }

    pub fn register_tokens(self) -> usize {
        4
    }
}

impl fmt::Display for BackboneScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackboneScale::Toy => f.write_str("toy"),
            BackboneScale::Small => f.write_str("small"),
            BackboneScale::Base => f.write_str("base"),
            BackboneScale::Large => f.write_str("large"),
        }
    }
}

/// Patient-level train/val/test proportions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.7, val: 0.15, test: 0.15 }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("train", self.train), ("val", self.val), ("test", self.test)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(DataError::Config(format!(
                    "split ratio {name} must lie in (0,1), got {v}"
                )));
            }
        }
        let sum = self.train + self.val + self.test;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(DataError::Config(format!("split ratios must sum to 1, got {sum}")));
        }
        Ok(())
    }
}

fn default_resolution() -> usize {
    224
}
fn default_epochs() -> usize {
    100
}
fn default_batch_size() -> usize {
    128
}
fn default_learning_rate() -> f64 {
    1e-4
}
fn default_weight_decay() -> f64 {
    1e-3
}
fn default_lambda_bce() -> f64 {
    0.3
}
fn default_lambda_dice() -> f64 {
    0.7
}
fn default_threshold() -> f64 {
    0.5
}
fn default_fractions() -> Vec<f64> {
    vec![1.0, 0.75, 0.5, 0.25]
}

/// Everything a training or evaluation run needs, minus file locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub scale: BackboneScale,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_lambda_bce")]
    pub lambda_bce: f64,
    #[serde(default = "default_lambda_dice")]
    pub lambda_dice: f64,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub ratios: SplitRatios,
    #[serde(default = "default_fractions")]
    pub fractions: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scale: BackboneScale::Base,
            resolution: default_resolution(),
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            learning_rate: default_learning_rate(),
            weight_decay: default_weight_decay(),
            lambda_bce: default_lambda_bce(),
            lambda_dice: default_lambda_dice(),
            threshold: default_threshold(),
            ratios: SplitRatios::default(),
            fractions: default_fractions(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(DataError::Config(msg));
        if self.resolution == 0 || !self.resolution.is_multiple_of(self.scale.patch_size()) {
            return err(format!(
                "resolution {} must be a positive multiple of the patch size {}",
                self.resolution,
                self.scale.patch_size()
            ));
        }
        if self.epochs == 0 {
            return err("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return err("batch size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return err(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return err(format!("weight decay must be non-negative, got {}", self.weight_decay));
        }
        if self.lambda_bce < 0.0 || self.lambda_dice < 0.0 {
            return err("loss weights must be non-negative".into());
        }
        if (self.lambda_bce + self.lambda_dice - 1.0).abs() > 1e-9 {
            return err(format!(
                "loss weights must sum to 1, got {}",
                self.lambda_bce + self.lambda_dice
            ));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return err(format!("threshold must lie in (0,1), got {}", self.threshold));
        }
        self.ratios.validate()?;
        if self.fractions.first() != Some(&1.0) {
            return err("fractions must start at 1.0".into());
        }
        for pair in self.fractions.windows(2) {
            if pair[1] >= pair[0] {
                return err("fractions must be strictly decreasing".into());
            }
        }
        if self.fractions.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
            return err("fractions must lie in (0,1]".into());
        }
        Ok(())
    }
}
