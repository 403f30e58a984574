//! Run configuration: TOML file, `key=value` overrides, and the provenance hash.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::DEFAULT_WINDOWS_S;
use crate::nn::{ModelConfig, TrainHyper};
use crate::pipeline::{CorpusParams, PipelineConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainParams {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
}

impl Default for TrainParams {
    fn default() -> Self {
        let h = TrainHyper::default();
        Self {
            lr: h.lr,
            batch_size: h.batch_size,
            epochs: h.epochs,
            patience: h.patience,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub corpus: u64,
    pub split: u64,
    /// Parameter initialization.
    pub init: u64,
    /// Batch order and dropout.
    pub train: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            corpus: 1,
            split: 2,
            init: 3,
            train: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalParams {
    pub windows_s: Vec<f64>,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self {
            windows_s: DEFAULT_WINDOWS_S.to_vec(),
        }
    }
}

/// Default locations; command-line flags take precedence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus_dir: PathBuf,
    pub train_dir: PathBuf,
    pub report_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            corpus_dir: "runs/corpus".into(),
            train_dir: "runs/train".into(),
            report_dir: "runs/report".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: CorpusParams,
    pub pipeline: PipelineConfig,
    pub model: ModelConfig,
    pub train: TrainParams,
    pub seeds: Seeds,
    pub eval: EvalParams,
    pub paths: Paths,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.pipeline.validate()?;
        self.model.validate()?;
        if self.pipeline.window_len != self.model.window_len {
            return Err(Error::invalid(format!(
                "pipeline.window_len {} differs from model.window_len {}",
                self.pipeline.window_len, self.model.window_len
            )));
        }
        if self.eval.windows_s.is_empty() || self.eval.windows_s.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::invalid("eval.windows_s must be non-empty and positive"));
        }
        if self.train.batch_size == 0 {
            return Err(Error::invalid("train.batch_size must be positive"));
        }
        Ok(())
    }

    pub fn train_hyper(&self) -> TrainHyper {
        TrainHyper {
            lr: self.train.lr,
            batch_size: self.train.batch_size,
            epochs: self.train.epochs,
            seed: self.seeds.train,
            patience: self.train.patience,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::InvalidParameter(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml_string()).map_err(|e| Error::io(path, e))
    }

    /// Applies a dotted-key override such as `train.epochs=50` or
    /// `corpus.scale_range.lo=0.002`. The value is read as a TOML literal,
    /// falling back to a plain string.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("override `{assignment}` is not key=value")))?;
        let key = key.trim();
        let raw = raw.trim();
        let value = parse_literal(raw);

        let mut root = toml::Value::try_from(&*self).map_err(|e| Error::invalid(e.to_string()))?;
        let mut slot = &mut root;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let table = slot
                .as_table_mut()
                .ok_or_else(|| Error::invalid(format!("`{}` is not a section", parts[..i].join("."))))?;
            slot = table
                .get_mut(*part)
                .ok_or_else(|| Error::invalid(format!("unknown config key `{key}`")))?;
        }
        if slot.is_table() {
            return Err(Error::invalid(format!("`{key}` is a section, not a value")));
        }
        // Integer literals assigned to float fields stay floats.
        *slot = match (&*slot, value) {
            (toml::Value::Float(_), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
            (_, v) => v,
        };
        *self = root
            .try_into()
            .map_err(|e| Error::invalid(format!("override `{assignment}`: {e}")))?;
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of everything except `paths`.
    pub fn hash(&self) -> String {
        let mut hashed = self.clone();
        hashed.paths = Paths::default();
        let bytes = serde_json::to_vec(&hashed).expect("config serializes to JSON");
        let digest = Sha256::digest(&bytes);
        hex::encode(&digest[..8])
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    #[derive(Deserialize)]
    struct Probe {
        v: toml::Value,
    }
    toml::from_str::<Probe>(&format!("v = {raw}"))
        .map(|p| p.v)
        .unwrap_or_else(|_| toml::Value::String(raw.to_string()))
}
