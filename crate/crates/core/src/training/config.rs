use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::{CROP_SIDE, RESIZE_SIDE};
use crate::error::{config, Result};
use crate::losses::LossWeights;
use crate::models::Architecture;
use crate::nn::AdamConfig;

/// Storage type of parameters, activations and optimizer moments.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl std::str::FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "f32" => Ok(Self::F32),
            "f64" => Ok(Self::F64),
            _ => Err(format!("unknown precision `{s}` (expected f32 or f64)")),
        }
    }
}

/// Restricts the training identities to a spurious subset: each one keeps
/// two preferred classes fully and the others with probability
/// `keep_other`. Preferred classes follow the identities' face width, so
/// identity shape predicts expression in training but not elsewhere.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpuriousConfig {
    pub keep_other: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub steps: u64,
    pub batch_size: usize,
    pub precision: Precision,
    pub loss: LossWeights,
    pub adam_g: AdamConfig,
    pub adam_d: AdamConfig,
    pub adam_e: AdamConfig,
    pub architecture: Architecture,
    /// Cross-validation run: tests on this fold, validates on the next.
    pub fold: usize,
    pub n_folds: usize,
    pub fold_seed: u64,
    /// Side of the aligned image (`n`) and of the network input (`m`).
    pub resize_side: usize,
    pub crop_side: usize,
    /// Expressive training samples must have at least this intensity.
    pub min_train_level: u8,
    pub augment: bool,
    pub spurious: Option<SpuriousConfig>,
    /// Steps between checkpoints; 0 writes only the final one.
    pub checkpoint_every: u64,
    /// Steps between validation passes; 0 disables checkpoint selection.
    pub validate_every: u64,
    /// Record real elapsed time in the metrics; breaks bitwise
    /// reproducibility of the CSV.
    pub log_wall_time: bool,
    pub data_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            steps: 200,
            batch_size: 8,
            precision: Precision::F64,
            loss: LossWeights::default(),
            adam_g: AdamConfig::default(),
            adam_d: AdamConfig::default(),
            adam_e: AdamConfig::default(),
            architecture: Architecture::ifgan(1, 6),
            fold: 0,
            n_folds: 10,
            fold_seed: 0,
            resize_side: RESIZE_SIDE,
            crop_side: CROP_SIDE,
            min_train_level: 2,
            augment: true,
            spurious: None,
            checkpoint_every: 0,
            validate_every: 50,
            log_wall_time: false,
            data_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        for (name, a) in [("adam_g", &self.adam_g), ("adam_d", &self.adam_d), ("adam_e", &self.adam_e)] {
            a.validate().map_err(|e| config(format!("{name}: {e}")))?;
        }
        self.architecture.validate()?;
        if self.batch_size == 0 {
            return Err(config("batch_size must be positive"));
        }
        if self.n_folds < 3 {
            return Err(config(format!("n_folds must be at least 3, got {}", self.n_folds)));
        }
        if self.fold >= self.n_folds {
            return Err(config(format!("fold {} out of range for {} folds", self.fold, self.n_folds)));
        }
        if self.crop_side == 0 || self.crop_side > self.resize_side {
            return Err(config(format!(
                "crop_side {} must be in 1..={}",
                self.crop_side, self.resize_side
            )));
        }
        if let Some(g) = &self.architecture.generator {
            let d = g.divisor();
            if self.crop_side % d != 0 {
                return Err(config(format!(
                    "crop_side {} must be divisible by {d} for the generator",
                    self.crop_side
                )));
            }
        }
        if let Some(d) = &self.architecture.discriminator {
            if d.output_extent(self.crop_side).is_none() {
                return Err(config(format!("crop_side {} is too small for the discriminator", self.crop_side)));
            }
        }
        if !(1..=4).contains(&self.min_train_level) {
            return Err(config(format!("min_train_level must be in 1..=4, got {}", self.min_train_level)));
        }
        if let Some(s) = &self.spurious {
            if !(0.0..=1.0).contains(&s.keep_other) {
                return Err(config(format!("spurious.keep_other must be in [0, 1], got {}", s.keep_other)));
            }
        }
        Ok(())
    }

    /// Equal up to the step budget: the condition for resuming.
    pub fn compatible_for_resume(&self, other: &Self) -> bool {
        Self { steps: 0, ..self.clone() } == Self { steps: 0, ..other.clone() }
    }

    /// The same settings with the raw-image classifier in place of IF-GAN.
    pub fn as_baseline(&self) -> Self {
        let c = &self.architecture.classifier;
        let channels = c.in_channels / 2;
        let mut arch = Architecture::baseline(channels.max(1), c.classes);
        arch.classifier = crate::models::ClassifierDesc {
            in_channels: channels.max(1),
            ..c.clone()
        };
        Self {
            architecture: arch,
            ..self.clone()
        }
    }
}
