use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, IoContext, Result};
use crate::metrics::MetricsParams;
use crate::model::ModelConfig;
use crate::scene::Ranges;
use crate::train::TrainConfig;

/// Everything a command needs, resolved from defaults, an optional JSON
/// file and command-line flags (in that order of precedence, lowest first).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub metrics: MetricsParams,
    pub training_ranges: Ranges,
    pub evaluation_ranges: Ranges,
    /// Training manifests, pooled.
    pub manifests: Vec<PathBuf>,
    /// Evaluation manifests, one report each.
    pub eval_manifests: Vec<PathBuf>,
    /// Optional speaker embedding file; missing speakers fall back to
    /// seeded surrogate vectors.
    pub embeddings: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            metrics: MetricsParams::default(),
            training_ranges: Ranges::training(),
            evaluation_ranges: Ranges::evaluation(),
            manifests: Vec::new(),
            eval_manifests: Vec::new(),
            embeddings: None,
        }
    }
}

/// A config file merged over the defaults. `model_given` records whether
/// the file had a `model` section.
pub struct Loaded {
    pub config: RunConfig,
    pub model_given: bool,
}

impl RunConfig {
    /// Merges the JSON object in `path` (if any) over the defaults. Nested
    /// objects merge key by key, so a file may set only what it changes.
    pub fn load(path: Option<&Path>) -> Result<Loaded> {
        let mut value = serde_json::to_value(RunConfig::default())?;
        let mut model_given = false;
        if let Some(path) = path {
            let text = fs::read_to_string(path).at(path)?;
            let file: Value = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            if !file.is_object() {
                return Err(Error::Config(format!("{}: expected a JSON object", path.display())));
            }
            model_given = file.get("model").is_some();
            merge(&mut value, file);
        }
        let config: RunConfig = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        Ok(Loaded { config, model_given })
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.metrics.validate()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        crate::model::write_atomic(path, text.as_bytes())
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
