//! Run configuration: a single TOML file drives every command. Missing keys
//! take the documented defaults, command-line flags override file keys, and
//! the merged effective config is copied into the output directory so any
//! run can be reproduced from that file alone.

use crate::error::CliError;
use adaptdet_core::config::ModelConfig;
use adaptdet_core::data::SynthConfig;
use adaptdet_core::training::TrainConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Environment variable that, when set, prefixes the output directory.
pub const OUTPUT_ROOT_ENV: &str = "ADAPTDET_OUTPUT_ROOT";

/// Dataset locations relative to `root`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub root: PathBuf,
    pub source_train: String,
    pub target_train: String,
    pub source_eval: String,
    pub target_eval: String,
    pub annotations: String,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            root: PathBuf::from("data"),
            source_train: "source_train".into(),
            target_train: "target_train".into(),
            source_eval: "source_eval".into(),
            target_eval: "target_eval".into(),
            annotations: "annotations.json".into(),
        }
    }
}

impl DataConfig {
    pub fn split_dir(&self, split: &str) -> PathBuf {
        self.root.join(split)
    }
}

/// Synthesis volumes; rendering knobs live in `render`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSection {
    pub n_train: usize,
    pub n_eval: usize,
    pub render: SynthConfig,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            n_train: 200,
            n_eval: 100,
            render: SynthConfig::default(),
        }
    }
}

/// Detection decoding and matching thresholds for evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub split: String,
    pub score_threshold: f64,
    pub nms_iou: f64,
    pub iou_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            split: "target_eval".into(),
            score_threshold: 0.05,
            nms_iou: 0.5,
            iou_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Output directory; `ADAPTDET_OUTPUT_ROOT` prefixes it when set.
    pub output: PathBuf,
    /// Periodic checkpoint interval in iterations; 0 keeps only the final one.
    pub checkpoint_every: usize,
    pub data: DataConfig,
    pub synth: SynthSection,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            output: PathBuf::from("runs/default"),
            checkpoint_every: 200,
            data: DataConfig::default(),
            synth: SynthSection::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parse a config file; also reports whether it pins the `[model]`
    /// section, which evaluation checks against checkpoints.
    pub fn load(path: &Path) -> Result<(RunConfig, bool), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("read {}", path.display()), e))?;
        let has_model = text
            .parse::<toml::Table>()
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
            .contains_key("model");
        let cfg = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Ok((cfg, has_model))
    }

    /// Output directory with the environment override applied.
    pub fn resolved_output(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) => PathBuf::from(root).join(&self.output),
            None => self.output.clone(),
        }
    }

    /// Write the merged effective config into `dir` as `config.toml`.
    pub fn write_effective(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Io(format!("create {}", dir.display()), e))?;
        let doc = toml::to_string_pretty(self)
            .map_err(|e| CliError::Config(format!("serialize config: {e}")))?;
        let path = dir.join("config.toml");
        std::fs::write(&path, doc)
            .map_err(|e| CliError::Io(format!("write {}", path.display()), e))
    }
}
