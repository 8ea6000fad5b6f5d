//! Run configuration: one JSON document with every stage's settings and a
//! master seed from which per-stage seeds are derived.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::SplitFractions;
use crate::dual_model::{ModelConfig, TrainingConfig};
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::serve::{BenchConfig, DEFAULT_TOP_K};
use crate::whitelist::KMeansConfig;

/// Seed of stage `label` under `master`: the first eight bytes of
/// SHA-256(`label:master`), little-endian.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let digest = Sha256::digest(format!("{label}:{master}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub conversations: usize,
    pub intents: usize,
    pub noise_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            conversations: 2000,
            intents: 20,
            noise_rate: 0.1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    /// Conversations as JSON lines; the synthetic corpus when absent.
    pub path: Option<PathBuf>,
    pub synth: SynthConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct WhitelistConfig {
    pub frequency_sizes: Vec<usize>,
    pub clustering_sizes: Vec<usize>,
    pub kmeans: KMeansConfig,
}

impl Default for WhitelistConfig {
    fn default() -> Self {
        WhitelistConfig {
            frequency_sizes: vec![1000, 10_000],
            clustering_sizes: vec![1000, 10_000],
            kmeans: KMeansConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct ServeConfig {
    pub address: String,
    pub top_k: usize,
    /// Whitelist id such as `frequency-1000`; the first frequency size when absent.
    pub whitelist: Option<String>,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig {
            address: "127.0.0.1:8080".into(),
            top_k: DEFAULT_TOP_K,
            whitelist: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed. Stage seeds, including `training.seed`, `eval.seed` and
    /// `bench.seed`, are derived from it and overwrite configured values.
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub split: SplitFractions,
    /// Pretrained word vectors in text format; seeded n-gram vectors when absent.
    pub embedding_path: Option<PathBuf>,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub whitelist: WhitelistConfig,
    pub eval: EvalConfig,
    pub serve: ServeConfig,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut c = RunConfig {
            seed: 0,
            corpus: CorpusConfig::default(),
            split: SplitFractions::default(),
            embedding_path: None,
            model: ModelConfig::default(),
            training: TrainingConfig::default(),
            whitelist: WhitelistConfig::default(),
            eval: EvalConfig::default(),
            serve: ServeConfig::default(),
            bench: BenchConfig::default(),
        };
        c.derive_stage_seeds();
        c
    }
}

impl RunConfig {
    /// Parses a config; unknown keys are errors that name the key.
    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let mut c: RunConfig = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        c.derive_stage_seeds();
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_json(&text, path)
    }

    /// Pretty JSON with every field present.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn stage_seed(&self, label: &str) -> u64 {
        derive_seed(self.seed, label)
    }

    /// Overwrites the per-stage seeds from the master seed.
    pub fn derive_stage_seeds(&mut self) {
        self.training.seed = self.stage_seed("train");
        self.eval.seed = self.stage_seed("eval");
        self.bench.seed = self.stage_seed("bench");
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.training.validate()?;
        self.eval.validate()?;
        if self.corpus.synth.intents < 2 {
            return Err(Error::invalid("corpus.synth.intents must be at least 2"));
        }
        if !(0.0..=1.0).contains(&self.corpus.synth.noise_rate) {
            return Err(Error::invalid("corpus.synth.noise_rate must be in [0, 1]"));
        }
        if self.whitelist.frequency_sizes.contains(&0) || self.whitelist.clustering_sizes.contains(&0) {
            return Err(Error::invalid("whitelist sizes must be at least 1"));
        }
        if self.serve.top_k == 0 {
            return Err(Error::invalid("serve.top_k must be at least 1"));
        }
        self.serve
            .address
            .parse::<SocketAddr>()
            .map_err(|e| Error::invalid(format!("serve.address {:?}: {e}", self.serve.address)))?;
        if self.bench.samples == 0 {
            return Err(Error::invalid("bench.samples must be at least 1"));
        }
        Ok(())
    }
}

/// JSON schema of [`RunConfig`].
pub fn config_schema() -> serde_json::Value {
    serde_json::to_value(schemars::schema_for!(RunConfig)).expect("schema serializes")
}

/// JSON schema of [`crate::eval::EvalReport`].
pub fn report_schema() -> serde_json::Value {
    serde_json::to_value(schemars::schema_for!(crate::eval::EvalReport)).expect("schema serializes")
}
