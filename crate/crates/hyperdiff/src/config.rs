//! Run configuration: one JSON file with per-stage sections. Command
//! line flags override file fields, which override these defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use hyperdiff_core::hsi::{SplitRule, SplitSpec};
use hyperdiff_core::ssdn::SsdnConfig;
use hyperdiff_core::svit::{FeatureSource, SvitConfig};

use crate::container::load_json;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Cube container directory.
    pub dataset: Option<PathBuf>,
    /// Artifact directory.
    pub out_dir: Option<PathBuf>,
    /// Root seed; every stage derives its own streams from it.
    pub seed: u64,
    pub split: SplitSection,
    pub schedule: ScheduleSection,
    pub ssdn: SsdnSection,
    pub diffusion_train: DiffusionTrainSection,
    pub features: FeatureSection,
    pub svit: SvitSection,
    pub classifier_train: ClassifierTrainSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            out_dir: None,
            seed: 0,
            split: SplitSection::default(),
            schedule: ScheduleSection::default(),
            ssdn: SsdnSection::default(),
            diffusion_train: DiffusionTrainSection::default(),
            features: FeatureSection::default(),
            svit: SvitSection::default(),
            classifier_train: ClassifierTrainSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    /// "ratio" or "counts".
    pub mode: String,
    pub ratio: f64,
    /// class id -> training count, used in counts mode.
    pub counts: BTreeMap<u16, usize>,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            mode: "ratio".to_string(),
            ratio: 0.1,
            counts: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            timesteps: 500,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsdnSection {
    pub patch_size: usize,
    pub base_channels: usize,
    pub time_embed_dim: usize,
}

impl Default for SsdnSection {
    fn default() -> Self {
        Self {
            patch_size: 16,
            base_channels: 8,
            time_embed_dim: 64,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionTrainSection {
    pub batch_size: usize,
    pub learning_rate: f32,
    pub max_steps: usize,
    pub checkpoint_every: usize,
    /// 0 disables the plateau stop.
    pub plateau_window: usize,
    pub min_steps: usize,
}

impl Default for DiffusionTrainSection {
    fn default() -> Self {
        Self {
            batch_size: 256,
            learning_rate: 1e-4,
            max_steps: 30_000,
            checkpoint_every: 500,
            plateau_window: 0,
            min_steps: 200,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSection {
    pub timestamp: usize,
    pub layer_index: usize,
    pub pca_dim: usize,
    /// Noise seed for extraction; defaults to a stream derived from the
    /// root seed when absent.
    pub noise_seed: Option<u64>,
}

impl Default for FeatureSection {
    fn default() -> Self {
        Self {
            timestamp: 5,
            layer_index: 1,
            pca_dim: 64,
            noise_seed: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvitSection {
    pub context: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub blocks: usize,
    pub mlp_dim: usize,
    pub dropout: f32,
    pub feature_source: FeatureSource,
}

impl Default for SvitSection {
    fn default() -> Self {
        Self {
            context: 8,
            model_dim: 64,
            heads: 4,
            blocks: 5,
            mlp_dim: 128,
            dropout: 0.1,
            feature_source: FeatureSource::Diffusion,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierTrainSection {
    pub learning_rate: f32,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for ClassifierTrainSection {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 20,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: RunConfig = load_json(path).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match self.split.mode.as_str() {
            "ratio" => {
                if !(self.split.ratio > 0.0 && self.split.ratio < 1.0) {
                    return Err(Error::Config(format!(
                        "split.ratio {} outside (0, 1)",
                        self.split.ratio
                    )));
                }
            }
            "counts" => {
                if self.split.counts.is_empty() {
                    return Err(Error::Config(
                        "split.mode \"counts\" needs a non-empty split.counts map".to_string(),
                    ));
                }
            }
            other => {
                return Err(Error::Config(format!(
                    "split.mode {other:?} must be \"ratio\" or \"counts\""
                )))
            }
        }
        if self.schedule.timesteps == 0 {
            return Err(Error::Config("schedule.timesteps must be >= 1".to_string()));
        }
        if !(self.schedule.beta_start > 0.0
            && self.schedule.beta_start <= self.schedule.beta_end
            && self.schedule.beta_end < 1.0)
        {
            return Err(Error::Config(
                "schedule betas must satisfy 0 < start <= end < 1".to_string(),
            ));
        }
        if self.features.timestamp == 0 || self.features.timestamp > self.schedule.timesteps {
            return Err(Error::Config(format!(
                "features.timestamp {} outside 1..={}",
                self.features.timestamp, self.schedule.timesteps
            )));
        }
        if self.features.layer_index > 2 {
            return Err(Error::Config(format!(
                "features.layer_index {} must be 0, 1, or 2",
                self.features.layer_index
            )));
        }
        if self.diffusion_train.batch_size == 0 || self.classifier_train.batch_size == 0 {
            return Err(Error::Config("batch sizes must be >= 1".to_string()));
        }
        Ok(())
    }

    pub fn split_spec(&self) -> SplitSpec {
        let rule = match self.split.mode.as_str() {
            "counts" => SplitRule::PerClassCounts(self.split.counts.clone()),
            _ => SplitRule::Ratio(self.split.ratio),
        };
        SplitSpec {
            rule,
            seed: hyperdiff_core::rng::derive_seed(self.seed, "split", 0),
        }
    }

    pub fn ssdn_config(&self, bands: usize) -> SsdnConfig {
        SsdnConfig {
            patch_size: self.ssdn.patch_size,
            bands,
            base_channels: self.ssdn.base_channels,
            time_embed_dim: self.ssdn.time_embed_dim,
        }
    }

    pub fn svit_config(&self, classes: usize, d_in: usize) -> SvitConfig {
        SvitConfig {
            context: self.svit.context,
            model_dim: self.svit.model_dim,
            heads: self.svit.heads,
            blocks: self.svit.blocks,
            mlp_dim: self.svit.mlp_dim,
            classes,
            dropout: self.svit.dropout,
            feature_source: self.svit.feature_source,
            d_in,
        }
    }

    pub fn feature_noise_seed(&self) -> u64 {
        self.features
            .noise_seed
            .unwrap_or_else(|| hyperdiff_core::rng::derive_seed(self.seed, "feature-noise", 0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn bad_split_mode_rejected() {
        let cfg = RunConfig {
            split: SplitSection {
                mode: "jitter".into(),
                ..Default::default()
            },
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_fields_rejected() {
        let err = serde_json::from_str::<RunConfig>(r#"{"speling": 1}"#).unwrap_err();
        assert!(err.to_string().contains("speling"));
    }

    #[test]
    fn partial_files_fill_defaults() {
        let cfg: RunConfig =
            serde_json::from_str(r#"{"seed": 7, "schedule": {"timesteps": 50}}"#).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.schedule.timesteps, 50);
        assert_eq!(cfg.schedule.beta_end, 0.02);
        assert_eq!(cfg.svit.heads, 4);
        assert_eq!(cfg.svit.blocks, 5);
    }
}
