//! Run configuration: one JSON document covering every subcommand, merged
//! over the defaults, then patched by `--set path=value` overrides.

use std::path::Path;

use deepmatch_core::checkpoint::sha256_hex;
use deepmatch_core::datapipe::synth::{SynthConfig, CONCEPTS_FILE, EVAL_FILE, PHRASES_FILE};
use deepmatch_core::datapipe::{DataConfig, DataPaths};
use deepmatch_core::eval::{Retrieval, DEFAULT_MS};
use deepmatch_core::index::IvfConfig;
use deepmatch_core::serve::ServeConfig;
use deepmatch_core::text::TextConfig;
use deepmatch_core::training::TrainConfig;
use deepmatch_core::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Hashed ngram buckets for command-line runs. The library default sizes the
/// table for production vocabularies; this keeps a base model at 128-d
/// around 16 MB.
pub const DESK_NUM_BUCKETS: usize = 1 << 14;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VocabConfig {
    pub min_count: u64,
}

impl Default for VocabConfig {
    fn default() -> Self {
        VocabConfig { min_count: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IndexConfig {
    /// Build the inverted-file layout for approximate search.
    pub cluster: bool,
    pub ivf: IvfConfig,
    /// `entity \t concept;...` file; skipped when absent from disk.
    pub concepts: Option<String>,
}

impl Default for IndexConfig {
    fn default() -> Self {
        IndexConfig {
            cluster: true,
            ivf: IvfConfig::default(),
            concepts: Some(CONCEPTS_FILE.into()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub cases: String,
    pub ms: Vec<usize>,
    pub retrieval: Retrieval,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            cases: EVAL_FILE.into(),
            ms: DEFAULT_MS.to_vec(),
            retrieval: Retrieval::Exact,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Set from `--seed`; copied into `train.seed` and `index.ivf.seed`.
    pub seed: u64,
    pub synth: SynthConfig,
    pub data: DataConfig,
    pub inputs: DataPaths,
    /// Phrase list for query segmentation; skipped when absent from disk.
    pub phrases: Option<String>,
    pub text: TextConfig,
    pub vocab: VocabConfig,
    pub train: TrainConfig,
    pub index: IndexConfig,
    pub eval: EvalConfig,
    pub serve: ServeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            synth: SynthConfig::default(),
            data: DataConfig::default(),
            inputs: DataPaths::default(),
            phrases: Some(PHRASES_FILE.into()),
            text: TextConfig {
                num_buckets: DESK_NUM_BUCKETS,
                ..TextConfig::default()
            },
            vocab: VocabConfig::default(),
            train: TrainConfig::default(),
            index: IndexConfig::default(),
            eval: EvalConfig::default(),
            serve: ServeConfig::default(),
        }
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::ConfigInvalid(msg.into())
}

/// Recursively overlays `patch` onto `base`; objects merge key by key.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, p) => *slot = p,
    }
}

/// Applies `a.b.c=value`. The value is parsed as JSON, falling back to a
/// plain string.
fn set_path(root: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| invalid(format!("override {assignment:?} is not path=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        let Value::Object(map) = node else {
            return Err(invalid(format!("override {path:?}: {} is not an object", keys[..i].join("."))));
        };
        if i + 1 == keys.len() {
            map.insert(key.to_string(), value);
            return Ok(());
        }
        node = map.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Err(invalid(format!("override {assignment:?} has an empty path")))
}

impl RunConfig {
    /// Defaults, then the file (if any), then overrides, then the seed.
    pub fn resolve(file: Option<&Path>, overrides: &[String], seed: u64) -> Result<Self> {
        let mut root = serde_json::to_value(RunConfig::default())?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => Error::InputMissing(path.to_path_buf()),
                _ => Error::Io(e),
            })?;
            let patch: Value = serde_json::from_str(&text)
                .map_err(|e| invalid(format!("{}: {e}", path.display())))?;
            merge(&mut root, patch);
        }
        for o in overrides {
            set_path(&mut root, o)?;
        }
        let mut config: RunConfig = serde_json::from_value(root).map_err(|e| invalid(e.to_string()))?;
        config.seed = seed;
        config.train.seed = seed;
        config.index.ivf.seed = seed;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.data.validate()?;
        self.text.validate()?;
        self.train.validate()?;
        self.index.ivf.validate()?;
        self.serve.validate()?;
        if self.eval.ms.is_empty() || self.eval.ms.contains(&0) {
            return Err(invalid("eval.ms must be a non-empty list of cutoffs >= 1"));
        }
        Ok(())
    }

    /// sha256 of the canonical JSON of the effective configuration.
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}
