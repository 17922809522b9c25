use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use t2d_core::model::ModelConfig;
use t2d_core::pipeline::PipelineConfig;
use t2d_core::synth::SynthConfig;
use t2d_core::train::TrainConfig;

use crate::CliError;

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "T2D_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub train_mixtures: usize,
    pub test_mixtures: usize,
    /// The training split uses this seed, the test split `seed + 1`.
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { train_mixtures: 2000, test_mixtures: 200, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub data_dir: PathBuf,
    pub model_dir: PathBuf,
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths { data_dir: "data".into(), model_dir: "model".into(), output_dir: "out".into() }
    }
}

/// Everything a run needs. Every section is optional in the file and
/// defaults to the toy setup.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub synth: SynthConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub pipeline: PipelineConfig,
    pub paths: Paths,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`, or the file named by [`CONFIG_ENV`], or falls back to
    /// defaults.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let env = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
        match path.map(Path::to_path_buf).or(env) {
            Some(p) => {
                let text = std::fs::read_to_string(&p).map_err(|e| CliError::Usage(format!("config {}: {e}", p.display())))?;
                Self::from_json(&text)
            }
            None => {
                let cfg = RunConfig::default();
                cfg.validate()?;
                Ok(cfg)
            }
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |e: t2d_core::Error| CliError::Usage(e.to_string());
        self.model.validate().map_err(usage)?;
        self.synth.validate().map_err(usage)?;
        self.train.validate().map_err(usage)?;
        self.pipeline.validate().map_err(usage)?;
        let m = &self.model;
        let s = &self.synth;
        if m.feat_dim != s.feat_dim || m.profile_dim != s.profile_dim {
            return Err(CliError::Usage(format!(
                "model dims (features {}, profiles {}) differ from synth dims ({}, {})",
                m.feat_dim, m.profile_dim, s.feat_dim, s.profile_dim
            )));
        }
        if m.frame_period != s.frame_period {
            return Err(CliError::Usage("model and synth frame periods differ".into()));
        }
        if self.data.train_mixtures == 0 || self.data.test_mixtures == 0 {
            return Err(CliError::Usage("data.train_mixtures and data.test_mixtures must be positive".into()));
        }
        Ok(())
    }
}
