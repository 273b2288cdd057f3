//! Run configuration file (TOML). Every section is optional; missing keys
//! take the documented defaults and unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ablation::ProtocolConfig;
use crate::env::{EnvConfig, GenParams};
use crate::eval::EvalConfig;
use crate::policy::ModelConfig;
use crate::trainer::{PretrainConfig, TrainConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// One room family of the generated corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyConfig {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub obstacle_density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub families: Vec<FamilyConfig>,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub classes_per_scene: usize,
    pub large_object_prob: f64,
    pub max_retries: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        let family = |name: &str, w, h, d| FamilyConfig {
            name: name.into(),
            width: w,
            height: h,
            obstacle_density: d,
        };
        let g = GenParams::default();
        Self {
            families: vec![
                family("kitchen", 11, 11, 0.20),
                family("living", 13, 13, 0.10),
                family("bedroom", 11, 11, 0.15),
                family("bathroom", 7, 7, 0.10),
            ],
            train: 20,
            val: 5,
            test: 5,
            classes_per_scene: g.classes_per_scene,
            large_object_prob: g.large_object_prob,
            max_retries: g.max_retries,
        }
    }
}

impl CorpusConfig {
    pub fn gen_params(&self, family: &FamilyConfig) -> GenParams {
        GenParams {
            width: family.width,
            height: family.height,
            obstacle_density: family.obstacle_density,
            classes_per_scene: self.classes_per_scene,
            large_object_prob: self.large_object_prob,
            max_retries: self.max_retries,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Expert demonstrations per training scene for pretraining.
    pub demos_per_scene: usize,
    /// Evaluation episodes per scene.
    pub eval_per_scene: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            demos_per_scene: 10,
            eval_per_scene: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub seeds: Vec<u64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3, 4, 5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Corpus root holding `train/`, `val/` and `test/`.
    pub scenes: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            scenes: PathBuf::from("scenes"),
        }
    }
}

/// Full run configuration. `seed` is the single source of randomness and
/// overrides the per-section seeds; `model.num_classes` and
/// `model.patch_len` are derived from `env`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub env: EnvConfig,
    pub model: ModelConfig,
    pub corpus: CorpusConfig,
    pub data: DataConfig,
    pub pretrain: PretrainConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub ablation: AblationConfig,
    pub paths: PathsConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.resolved()
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, path)
    }

    /// Propagates the global seed and derived sizes, then validates.
    pub fn resolved(mut self) -> Result<Self, ConfigError> {
        self.pretrain.seed = self.seed;
        self.train.seed = self.seed;
        self.eval.seed = self.seed;
        self.model.num_classes = self.env.num_classes;
        self.model.patch_len = self.env.patch_len();
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if !(self.train.gamma > 0.0 && self.train.gamma <= 1.0) {
            return bad("train.gamma must be in (0, 1]");
        }
        if self.train.workers == 0 {
            return bad("train.workers must be at least 1");
        }
        if self.train.n_step == 0 {
            return bad("train.n_step must be at least 1");
        }
        if self.env.num_classes == 0 {
            return bad("env.num_classes must be at least 1");
        }
        if !(0.0..1.0).contains(&self.model.attention_dropout) {
            return bad("model.attention_dropout must be in [0, 1)");
        }
        if self.model.iom_capacity == 0 || self.model.memory_capacity == 0 {
            return bad("model.iom_capacity and model.memory_capacity must be positive");
        }
        if self.corpus.families.is_empty() {
            return bad("corpus.families must not be empty");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Writes the resolved configuration into `dir` as `config.toml`.
    pub fn write_beside(&self, dir: &Path) -> std::io::Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("config.toml");
        std::fs::write(&path, self.to_toml())?;
        Ok(path)
    }

    /// Ablation protocol on the first corpus family.
    pub fn protocol(&self) -> ProtocolConfig {
        let family = &self.corpus.families[0];
        ProtocolConfig {
            family: family.name.clone(),
            gen: self.corpus.gen_params(family),
            train_scenes: self.corpus.train,
            test_scenes: self.corpus.test,
            demos_per_scene: self.data.demos_per_scene,
            eval_per_scene: self.data.eval_per_scene,
            pretrain: self.pretrain.clone(),
            train: self.train.clone(),
            eval: self.eval.clone(),
        }
    }
}
