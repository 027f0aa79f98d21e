use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use trajformer_core::evaluation::EvalConfig;
use trajformer_core::model::ModelConfig;
use trajformer_core::scene::GeneratorConfig;
use trajformer_core::training::TrainConfig;

use crate::error::CliError;

/// Everything a run depends on. The JSON form is what `--config` reads and
/// what every artifact embeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: Option<PathBuf>,
    pub partition: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub generator: GeneratorConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dataset: None,
            partition: None,
            checkpoint: None,
            out: None,
            generator: GeneratorConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config("config", format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::config("config", format!("{}: {e}", path.display())))
    }

    pub fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("run config serializes")
    }
}

pub fn require<'a>(stage: &'static str, field: &str, value: &'a Option<PathBuf>) -> Result<&'a Path, CliError> {
    value
        .as_deref()
        .ok_or_else(|| CliError::config(stage, format!("missing field `{field}`")))
}

pub fn require_existing<'a>(stage: &'static str, field: &str, value: &'a Option<PathBuf>) -> Result<&'a Path, CliError> {
    let path = require(stage, field, value)?;
    if !path.exists() {
        return Err(CliError::config(stage, format!("{field} {} does not exist", path.display())));
    }
    Ok(path)
}
