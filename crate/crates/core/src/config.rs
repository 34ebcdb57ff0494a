//! Experiment configuration: one JSON document drives every pipeline stage.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::SynthConfig;
use crate::error::{Error, Result};
use crate::foundation::{TaskId, TcnArch, TrainConfig};
use crate::refurbish::{RefurbishArch, RefurbishTrainConfig};
use crate::template::TemplateConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    pub window_len: usize,
    /// Window stride for foundation training data.
    pub stride: usize,
    /// Trailing fraction of every able stream kept out of foundation training.
    pub holdout_fraction: f64,
    pub foundation_arch: TcnArch,
    pub foundation_train: TrainConfig,
    pub direct_arch: TcnArch,
    pub direct_train: TrainConfig,
    pub template: TemplateConfig,
    pub refurbish_arch: RefurbishArch,
    pub refurbish: RefurbishTrainConfig,
    /// One refurbish module shared by all amputees instead of one each.
    pub pooled_refurbish: bool,
    /// Task name whose head serves the amputees.
    pub amputee_task: String,
    pub ratios: Vec<f64>,
    /// Split used for the cross-mapping baseline's evaluation set.
    pub cross_ratio: f64,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let arch = TcnArch {
            channels: vec![16, 16, 16],
            kernel_sizes: vec![3, 3, 3],
            dilations: vec![1, 2, 4],
            head_hidden: 16,
        };
        let mut cfg = Self {
            synth: SynthConfig::default(),
            window_len: 16,
            stride: 2,
            holdout_fraction: 0.2,
            foundation_arch: arch.clone(),
            foundation_train: TrainConfig {
                epochs: 12,
                batch_size: 32,
                lr: 2e-3,
                seed: 0,
            },
            direct_arch: arch,
            direct_train: TrainConfig {
                epochs: 150,
                batch_size: 16,
                lr: 2e-3,
                seed: 0,
            },
            template: TemplateConfig::default(),
            refurbish_arch: RefurbishArch {
                channels: vec![16],
                kernel_sizes: vec![3],
                dilations: vec![1],
            },
            refurbish: RefurbishTrainConfig::default(),
            pooled_refurbish: false,
            amputee_task: "walk-normal".to_string(),
            ratios: vec![0.05, 0.1, 0.2, 0.4],
            cross_ratio: 0.1,
            seed: 7,
        };
        cfg.propagate_seed();
        cfg
    }
}

impl ExperimentConfig {
    /// Derives every stage seed from the master seed. Stage seeds written in a
    /// config document are overwritten.
    pub fn propagate_seed(&mut self) {
        self.synth.seed = self.seed;
        self.foundation_train.seed = self.seed.wrapping_add(1);
        self.direct_train.seed = self.seed.wrapping_add(2);
        self.refurbish.seed = self.seed.wrapping_add(3);
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.propagate_seed();
        self
    }

    pub fn amputee_task_id(&self) -> Result<TaskId> {
        self.synth
            .tasks
            .iter()
            .position(|t| t.name == self.amputee_task)
            .map(|i| i as TaskId)
            .ok_or_else(|| {
                Error::config(
                    "amputee_task",
                    format!("`{}` is not a configured task", self.amputee_task),
                )
            })
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        if self.window_len < 2 {
            return Err(Error::config("window_len", "must be >= 2"));
        }
        if self.stride == 0 {
            return Err(Error::config("stride", "must be >= 1"));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(Error::config("holdout_fraction", "must lie in (0, 1)"));
        }
        self.foundation_arch.validate("foundation_arch")?;
        self.foundation_train.validate("foundation_train")?;
        self.direct_arch.validate("direct_arch")?;
        self.direct_train.validate("direct_train")?;
        self.template.validate()?;
        self.refurbish_arch.validate()?;
        self.refurbish.validate()?;
        self.amputee_task_id()?;
        if self.ratios.is_empty() {
            return Err(Error::config("ratios", "at least one ratio"));
        }
        if self.ratios.iter().any(|r| !(*r > 0.0 && *r < 1.0)) {
            return Err(Error::config("ratios", "each ratio must lie in (0, 1)"));
        }
        if self.ratios.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("ratios", "must be strictly ascending"));
        }
        if !(self.cross_ratio > 0.0 && self.cross_ratio < 1.0) {
            return Err(Error::config("cross_ratio", "must lie in (0, 1)"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut cfg: Self = serde_json::from_str(text).map_err(|e| {
            // serde reports the offending key in its message; surface it as the field.
            Error::config("config", e.to_string())
        })?;
        cfg.propagate_seed();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
