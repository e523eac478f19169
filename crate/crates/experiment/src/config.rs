use std::path::Path;

use meshres_core::augment::AugmentConfig;
use meshres_core::upsample::TieBreak;
use meshres_model::{ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::ExperimentError;

/// Everything a sweep needs. `seed` drives the split, the augmentation
/// streams and weight initialization; the seeds inside `augment` and
/// `train` are overwritten with it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub resolutions: Vec<usize>,
    pub eval_resolutions: Vec<usize>,
    pub test_fraction: f64,
    pub val_fraction_of_train: f64,
    pub augment: AugmentConfig,
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub knn_k: usize,
    pub tie_break: TieBreak,
    /// Keep only this top fraction of each scan (along its thinnest axis)
    /// before decimation.
    pub crop_keep_fraction: Option<f64>,
    pub normalize: bool,
    pub preserve_boundary: bool,
    pub timing_repeats: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            resolutions: vec![2000, 4000, 6000, 8000, 10000, 16000],
            eval_resolutions: vec![10000, 16000],
            test_fraction: 0.2,
            val_fraction_of_train: 0.2,
            augment: AugmentConfig::default(),
            seed: 0,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            knn_k: 3,
            tie_break: TieBreak::Nearest,
            crop_keep_fraction: None,
            normalize: true,
            preserve_boundary: true,
            timing_repeats: 3,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        for (name, f) in [
            ("test_fraction", self.test_fraction),
            ("val_fraction_of_train", self.val_fraction_of_train),
        ] {
            if !(f > 0.0 && f < 1.0) {
                return bad(format!("{name} {f} outside (0, 1)"));
            }
        }
        if self.resolutions.is_empty() {
            return bad("no training resolutions".into());
        }
        for (name, list) in [("resolutions", &self.resolutions), ("eval_resolutions", &self.eval_resolutions)] {
            if list.windows(2).any(|w| w[0] >= w[1]) || list.contains(&0) {
                return bad(format!("{name} must be positive and strictly ascending: {list:?}"));
            }
        }
        if self.knn_k == 0 {
            return bad("knn_k must be at least 1".into());
        }
        if self.timing_repeats < 3 {
            return bad("timing_repeats must be at least 3".into());
        }
        if let Some(k) = self.crop_keep_fraction {
            if !(k > 0.0 && k <= 1.0) {
                return bad(format!("crop_keep_fraction {k} outside (0, 1]"));
            }
        }
        self.augment.validate().map_err(ExperimentError::Config)?;
        self.model.validate()?;
        self.train.validate()?;
        Ok(())
    }

    /// `(train_res, eval_res)` pairs that get an upsampled evaluation: every
    /// evaluation resolution above a training resolution that is not itself
    /// an evaluation resolution.
    pub fn upsample_pairs(&self) -> Vec<(usize, usize)> {
        self.resolutions
            .iter()
            .filter(|r| !self.eval_resolutions.contains(r))
            .flat_map(|&r| self.eval_resolutions.iter().filter(move |&&e| e > r).map(move |&e| (r, e)))
            .collect()
    }

    pub fn augment_config(&self) -> AugmentConfig {
        AugmentConfig {
            seed: self.seed,
            ..self.augment
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let config: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<(), ExperimentError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}
