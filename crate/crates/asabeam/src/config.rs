//! The JSON run configuration shared by every subcommand.

use std::path::{Path, PathBuf};

use asabeam_core::beamform::DEFAULT_LOADING;
use asabeam_core::dsp::StftConfig;
use asabeam_core::features::MaskKind;
use asabeam_core::metrics::{Condition, DEFAULT_FILTER_LEN};
use asabeam_core::scene::SceneDistribution;
use asabeam_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

fn default_conditions() -> Vec<Condition> {
    vec![Condition::Identity]
}
fn default_filter_len() -> usize {
    DEFAULT_FILTER_LEN
}
fn default_loading() -> f64 {
    DEFAULT_LOADING
}
fn default_workers() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "default_conditions")]
    pub conditions: Vec<Condition>,
    #[serde(default = "default_filter_len")]
    pub filter_len: usize,
    #[serde(default)]
    pub mask_kind: MaskKind,
    #[serde(default)]
    pub stft: StftConfig,
    #[serde(default = "default_loading")]
    pub loading: f64,
    /// Evaluate only the first utterances of the manifest.
    #[serde(default)]
    pub max_utterances: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            conditions: default_conditions(),
            filter_len: default_filter_len(),
            mask_kind: MaskKind::default(),
            stft: StftConfig::default(),
            loading: default_loading(),
            max_utterances: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

/// Everything a command may need; sections a command does not use may be
/// omitted. The top-level seed feeds every command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub scene: SceneDistribution,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub evaluate: EvalConfig,
    #[serde(default)]
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            workers: default_workers(),
            scene: SceneDistribution::default(),
            train: None,
            evaluate: EvalConfig::default(),
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    /// Parses and validates; errors name the offending field path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            AppError::Config(format!("at `{}`: {}", path, e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        RunConfig::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |section: &str, e: asabeam_core::Error| AppError::Config(format!("{}: {}", section, e));
        self.scene.validate().map_err(|e| cfg("scene", e))?;
        if let Some(t) = &self.train {
            t.validate().map_err(|e| cfg("train", e))?;
        }
        self.evaluate.stft.validate().map_err(|e| cfg("evaluate.stft", e))?;
        if self.evaluate.filter_len == 0 || self.evaluate.conditions.is_empty() {
            return Err(AppError::Config(
                "evaluate: filter_len and the condition list must be non-empty".into(),
            ));
        }
        if self.workers == 0 {
            return Err(AppError::Config("workers must be at least 1".into()));
        }
        Ok(())
    }
}
