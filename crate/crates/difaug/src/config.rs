//! Experiment configuration files: strict JSON, every key defaulted, unknown
//! keys fatal. `ExperimentConfigFile::default()` doubles as the generated
//! reference config.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::{AugmentConfig, AugmentMode, DEFAULT_ETA};
use crate::error::{DifaugError, Result};
use crate::models::{DiscriminatorSpec, GeneratorSpec};
use crate::schedule::{
    NoiseSchedule, TSamplingPolicy, DEFAULT_BETA_MAX, DEFAULT_BETA_MIN, DEFAULT_TOTAL_STEPS,
};
use crate::train::{Phase, SignConvention, TrainConfig, DEFAULT_CALIB_PROBE_CROPS, DEFAULT_LAMBDA1, DEFAULT_LAMBDA2, DEFAULT_LR};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub seed: u64,
    pub patch_size: usize,
    pub count: usize,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection { seed: 0, patch_size: 48, count: 120 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    pub beta_min: f64,
    pub beta_max: f64,
    pub total_steps: usize,
    /// Inclusive upper bound of the uniform step draw during training.
    pub max_step: usize,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        ScheduleSection {
            beta_min: DEFAULT_BETA_MIN,
            beta_max: DEFAULT_BETA_MAX,
            total_steps: DEFAULT_TOTAL_STEPS,
            max_step: DEFAULT_TOTAL_STEPS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSection {
    pub enabled: bool,
    pub eta: f64,
    pub mode: AugmentMode,
    pub share_t_across_batch: bool,
}

impl Default for AugmentSection {
    fn default() -> Self {
        AugmentSection {
            enabled: true,
            eta: DEFAULT_ETA,
            mode: AugmentMode::LrMean,
            share_t_across_batch: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub generator: GeneratorSpec,
    pub discriminator: DiscriminatorSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhaseSection {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub total_iters: usize,
    pub calib_probe_interval: usize,
    pub calib_probe_crops: usize,
    pub sign_convention: SignConvention,
}

impl Default for PhaseSection {
    fn default() -> Self {
        PhaseSection {
            lambda1: DEFAULT_LAMBDA1,
            lambda2: DEFAULT_LAMBDA2,
            lr: DEFAULT_LR,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 4,
            total_iters: 600,
            calib_probe_interval: 200,
            calib_probe_crops: DEFAULT_CALIB_PROBE_CROPS,
            sign_convention: SignConvention::Standard,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub seed: u64,
    pub pretrain: PhaseSection,
    pub adversarial: PhaseSection,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            seed: 0,
            pretrain: PhaseSection::default(),
            adversarial: PhaseSection { total_iters: 1600, ..PhaseSection::default() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: "runs/exp".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfigFile {
    pub dataset: DatasetSection,
    pub schedule: ScheduleSection,
    pub augment: AugmentSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub output: OutputSection,
}

impl ExperimentConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| DifaugError::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DifaugError::io(path.display().to_string(), e))?;
        Self::parse(&text)
            .map_err(|e| DifaugError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())
            .map_err(|e| DifaugError::io(path.display().to_string(), e))
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::new(self.schedule.beta_min, self.schedule.beta_max, self.schedule.total_steps)
    }

    /// The corruption config, or None when augmentation is disabled.
    pub fn augment_config(&self) -> Result<Option<AugmentConfig>> {
        if !self.augment.enabled {
            return Ok(None);
        }
        let schedule = self.schedule()?;
        let mut cfg = AugmentConfig::new(schedule, self.augment.eta, self.augment.mode)?;
        cfg.share_t_across_batch = self.augment.share_t_across_batch;
        cfg.policy = TSamplingPolicy { max_step: self.schedule.max_step };
        if cfg.policy.max_step > schedule.total_steps() {
            return Err(DifaugError::Config(format!(
                "schedule.max_step {} exceeds total_steps {}",
                cfg.policy.max_step,
                schedule.total_steps()
            )));
        }
        Ok(cfg.into())
    }

    pub fn train_config(&self, phase: Phase) -> Result<TrainConfig> {
        let section = match phase {
            Phase::Pretrain => &self.train.pretrain,
            Phase::Adversarial => &self.train.adversarial,
        };
        let cfg = TrainConfig {
            phase,
            lambda1: section.lambda1,
            lambda2: section.lambda2,
            lr: section.lr,
            adam_beta1: section.adam_beta1,
            adam_beta2: section.adam_beta2,
            adam_eps: section.adam_eps,
            batch_size: section.batch_size,
            total_iters: section.total_iters,
            augment: match phase {
                Phase::Pretrain => None,
                Phase::Adversarial => self.augment_config()?,
            },
            calib_probe_interval: section.calib_probe_interval,
            calib_probe_crops: section.calib_probe_crops,
            seed: self.train.seed,
            sign_convention: section.sign_convention,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
