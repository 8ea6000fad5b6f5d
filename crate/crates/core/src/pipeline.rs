//! Experiment stages over a run directory with a fixed layout:
//!
//! ```text
//! run/
//!   manifest.json        stage records: seeds, configs, input and output hashes
//!   data/                corpus.jsonl, train/validation/test.jsonl, split.json, stats.json
//!   checkpoints/         epoch-NNN.ckpt, best.ckpt, metrics.jsonl
//!   whitelists/          {method}-{size}.tsv, {method}-{size}.index.bin
//!   reports/             eval.json, eval.txt, bench-*.json
//! ```
//!
//! Every artifact except `metrics.jsonl` and benchmark reports is a pure
//! function of the configuration.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::corpus::{corpus_hash, corpus_stats, extract_all, read_jsonl, split_corpus, synth_corpus, write_jsonl, Conversation, CorpusStats, TrainingExample};
use crate::dual_model::{load_checkpoint, Checkpoint, DualEncoder, NegativeSampler, TrainReport, Trainer};
use crate::embeddings::SubwordEmbedding;
use crate::error::{Error, Result};
use crate::eval::{eval_report, render_table, EvalReport, ReportInputs};
use crate::serve::{ResponseIndex, Suggester};
use crate::whitelist::{build_clustering_whitelist, build_frequency_whitelist, load_whitelist, save_whitelist, Provenance, Whitelist, WhitelistMethod};

pub const MANIFEST_VERSION: u32 = 1;

/// Hex SHA-256 of a file's bytes.
pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) => fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e)),
        None => Ok(()),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

/// What one stage consumed and produced. Hashes are hex SHA-256 of file
/// bytes, keyed by path relative to the run directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageRecord {
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub manifest_version: u32,
    pub engine_version: String,
    pub config: RunConfig,
    pub stages: BTreeMap<String, StageRecord>,
}

/// A run directory.
#[derive(Clone, Debug)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn data(&self, name: &str) -> PathBuf {
        self.root.join("data").join(name)
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn best_checkpoint(&self) -> PathBuf {
        self.checkpoints().join("best.ckpt")
    }

    pub fn whitelists(&self) -> PathBuf {
        self.root.join("whitelists")
    }

    pub fn whitelist_path(&self, id: &str) -> PathBuf {
        self.whitelists().join(format!("{id}.tsv"))
    }

    pub fn index_path(&self, id: &str) -> PathBuf {
        self.whitelists().join(format!("{id}.index.bin"))
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    fn relative(&self, path: &Path) -> String {
        path.strip_prefix(&self.root).unwrap_or(path).display().to_string()
    }

    pub fn load_manifest(&self) -> Result<Option<Manifest>> {
        let path = self.manifest_path();
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(Some(serde_json::from_str(&text)?))
    }

    /// Adds or replaces the record of `stage`, echoing the current config.
    pub fn record(&self, config: &RunConfig, stage: &str, record: StageRecord) -> Result<()> {
        let mut manifest = self.load_manifest()?.unwrap_or_else(|| Manifest {
            manifest_version: MANIFEST_VERSION,
            engine_version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            stages: BTreeMap::new(),
        });
        manifest.config = config.clone();
        manifest.stages.insert(stage.to_string(), record);
        write_json(&self.manifest_path(), &manifest)
    }

    /// Errors naming the stage that produces `path` when it is missing.
    fn require(&self, path: &Path, producer: &str) -> Result<()> {
        if path.exists() {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "{} not found; run `{producer}` first",
                path.display()
            )))
        }
    }

    fn hashes(&self, paths: &[PathBuf]) -> Result<BTreeMap<String, String>> {
        paths.iter().map(|p| Ok((self.relative(p), file_hash(p)?))).collect()
    }
}

fn config_value<T: Serialize>(value: &T) -> serde_json::Value {
    serde_json::to_value(value).expect("config serializes")
}

/// Generates the synthetic corpus into `data/corpus.jsonl`.
pub fn synth_stage(run: &RunDir, config: &RunConfig) -> Result<PathBuf> {
    let seed = config.stage_seed("synth");
    let s = &config.corpus.synth;
    let convs = synth_corpus(s.conversations, s.intents, s.noise_rate, seed)?;
    let path = run.data("corpus.jsonl");
    ensure_parent(&path)?;
    write_jsonl(&path, &convs)?;
    run.record(
        config,
        "synth-data",
        StageRecord {
            seed: Some(seed),
            config: config_value(s),
            inputs: BTreeMap::new(),
            outputs: run.hashes(std::slice::from_ref(&path))?,
        },
    )?;
    Ok(path)
}

/// The configured corpus file, or the synthetic one in the run directory.
pub fn corpus_path(run: &RunDir, config: &RunConfig) -> PathBuf {
    config.corpus.path.clone().unwrap_or_else(|| run.data("corpus.jsonl"))
}

pub fn load_corpus(run: &RunDir, config: &RunConfig) -> Result<Vec<Conversation>> {
    let path = corpus_path(run, config);
    run.require(&path, "synth-data")?;
    read_jsonl(&path)
}

/// Corpus statistics, also written to `data/stats.json`.
pub fn stats_stage(run: &RunDir, config: &RunConfig) -> Result<CorpusStats> {
    let convs = load_corpus(run, config)?;
    let stats = corpus_stats(&convs)?;
    let path = run.data("stats.json");
    write_json(&path, &stats)?;
    run.record(
        config,
        "stats",
        StageRecord {
            seed: None,
            config: serde_json::Value::Null,
            inputs: run.hashes(&[corpus_path(run, config)])?,
            outputs: run.hashes(&[path])?,
        },
    )?;
    Ok(stats)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitManifest {
    pub seed: u64,
    pub fractions: crate::corpus::SplitFractions,
    pub corpus_hash: String,
    pub sizes: [usize; 3],
}

const SPLITS: [&str; 3] = ["train", "validation", "test"];

/// Writes `data/{train,validation,test}.jsonl` and `data/split.json`.
pub fn split_stage(run: &RunDir, config: &RunConfig) -> Result<SplitManifest> {
    let convs = load_corpus(run, config)?;
    let seed = config.stage_seed("split");
    let split = split_corpus(&convs, config.split, seed)?;
    let parts = [&split.train, &split.validation, &split.test];
    let mut outputs = Vec::new();
    for (name, part) in SPLITS.iter().zip(parts) {
        let path = run.data(&format!("{name}.jsonl"));
        ensure_parent(&path)?;
        write_jsonl(&path, part)?;
        outputs.push(path);
    }
    let manifest = SplitManifest {
        seed,
        fractions: config.split,
        corpus_hash: corpus_hash(&convs),
        sizes: parts.map(Vec::len),
    };
    let path = run.data("split.json");
    write_json(&path, &manifest)?;
    outputs.push(path);
    run.record(
        config,
        "split",
        StageRecord {
            seed: Some(seed),
            config: config_value(&config.split),
            inputs: run.hashes(&[corpus_path(run, config)])?,
            outputs: run.hashes(&outputs)?,
        },
    )?;
    Ok(manifest)
}

/// Training examples of split `name`.
pub fn load_split(run: &RunDir, name: &str) -> Result<Vec<TrainingExample>> {
    let path = run.data(&format!("{name}.jsonl"));
    run.require(&path, "split")?;
    Ok(extract_all(&read_jsonl(&path)?))
}

pub fn load_split_manifest(run: &RunDir) -> Result<SplitManifest> {
    let path = run.data("split.json");
    run.require(&path, "split")?;
    let text = fs::read_to_string(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn load_embedding(config: &RunConfig) -> Result<Arc<SubwordEmbedding>> {
    let emb = match &config.embedding_path {
        Some(path) => SubwordEmbedding::load_pretrained(path, config.model.embedding.clone())?,
        None => SubwordEmbedding::seeded(config.model.embedding.clone())?,
    };
    Ok(Arc::new(emb))
}

/// Trains from a seeded initialization, writing `checkpoints/`.
pub fn train_stage(run: &RunDir, config: &RunConfig) -> Result<TrainReport> {
    let train = load_split(run, "train")?;
    let validation = load_split(run, "validation")?;
    let embedding = load_embedding(config)?;
    let init_seed = config.stage_seed("init");
    let model = DualEncoder::new(config.model.clone(), embedding, init_seed)?;
    let mut trainer = Trainer::new(model, &train, config.training.clone())?;
    let report = trainer.train(&train, &validation, Some(&run.checkpoints()))?;
    let mut outputs = vec![run.best_checkpoint()];
    outputs.extend((1..=config.training.epochs).map(|e| run.checkpoints().join(format!("epoch-{e:03}.ckpt"))));
    run.record(
        config,
        "train",
        StageRecord {
            seed: Some(config.training.seed),
            config: serde_json::json!({
                "model": config.model,
                "training": config.training,
                "init_seed": init_seed,
                "embedding_path": config.embedding_path,
            }),
            inputs: run.hashes(&[run.data("train.jsonl"), run.data("validation.jsonl")])?,
            outputs: run.hashes(&outputs)?,
        },
    )?;
    Ok(report)
}

/// The best checkpoint of the run, or `path` when given.
pub fn load_model(run: &RunDir, config: &RunConfig, path: Option<&Path>) -> Result<Checkpoint> {
    let path = path.map(Path::to_path_buf).unwrap_or_else(|| run.best_checkpoint());
    run.require(&path, "train")?;
    load_checkpoint(&path, Some(load_embedding(config)?))
}

fn whitelist_provenance(run: &RunDir, seed: u64) -> Result<Provenance> {
    Ok(Provenance {
        corpus_hash: file_hash(&run.data("train.jsonl"))?,
        seed,
    })
}

/// Builds one whitelist from the training split into `whitelists/`.
pub fn whitelist_stage(run: &RunDir, config: &RunConfig, method: WhitelistMethod, size: usize) -> Result<Whitelist> {
    let train = load_split(run, "train")?;
    let seed = config.stage_seed(&format!("whitelist-{}-{size}", method.as_str()));
    let provenance = whitelist_provenance(run, seed)?;
    let mut inputs = vec![run.data("train.jsonl")];
    let wl = match method {
        WhitelistMethod::Frequency => build_frequency_whitelist(&train, size, provenance)?,
        WhitelistMethod::Clustering => {
            let ckpt = load_model(run, config, None)?;
            inputs.push(run.best_checkpoint());
            build_clustering_whitelist(&train, &ckpt.model, size, &config.whitelist.kmeans, seed, provenance)?
        }
    };
    let path = run.whitelist_path(&wl.id());
    ensure_parent(&path)?;
    save_whitelist(&path, &wl)?;
    run.record(
        config,
        &format!("whitelist-{}", wl.id()),
        StageRecord {
            seed: Some(seed),
            config: config_value(&config.whitelist),
            inputs: run.hashes(&inputs)?,
            outputs: run.hashes(&[path])?,
        },
    )?;
    Ok(wl)
}

/// Every whitelist in the run, ordered by file name.
pub fn load_whitelists(run: &RunDir) -> Result<Vec<(PathBuf, Whitelist)>> {
    let dir = run.whitelists();
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|e| Error::io(dir.display().to_string(), e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "tsv"))
        .collect();
    paths.sort();
    paths.into_iter().map(|p| Ok((p.clone(), load_whitelist(&p)?))).collect()
}

/// Full evaluation on the test split; writes `reports/eval.json` and
/// `reports/eval.txt`.
pub fn eval_stage(run: &RunDir, config: &RunConfig, checkpoint: Option<&Path>) -> Result<EvalReport> {
    let ckpt = load_model(run, config, checkpoint)?;
    let train = load_split(run, "train")?;
    let test = load_split(run, "test")?;
    let split = load_split_manifest(run)?;
    let pool = NegativeSampler::from_examples(&train)?;
    let whitelists = load_whitelists(run)?;
    let lists: Vec<Whitelist> = whitelists.iter().map(|(_, w)| w.clone()).collect();
    let inputs = ReportInputs {
        corpus_hash: split.corpus_hash,
        checkpoint_hash: ckpt.hash.clone(),
    };
    let report = eval_report(&ckpt.model, &test, &pool, &lists, &config.eval, inputs)?;
    let json = run.reports().join("eval.json");
    let text = run.reports().join("eval.txt");
    write_json(&json, &report)?;
    write_file(&text, render_table(&report).as_bytes())?;
    let mut input_paths = vec![
        checkpoint.map(Path::to_path_buf).unwrap_or_else(|| run.best_checkpoint()),
        run.data("train.jsonl"),
        run.data("test.jsonl"),
    ];
    input_paths.extend(whitelists.into_iter().map(|(p, _)| p));
    run.record(
        config,
        "eval",
        StageRecord {
            seed: Some(config.eval.seed),
            config: config_value(&config.eval),
            inputs: run.hashes(&input_paths)?,
            outputs: run.hashes(&[json, text])?,
        },
    )?;
    Ok(report)
}

/// The whitelist id served by default: the configured one, else the first
/// frequency size.
pub fn default_whitelist_id(config: &RunConfig) -> Result<String> {
    if let Some(id) = &config.serve.whitelist {
        return Ok(id.clone());
    }
    config
        .whitelist
        .frequency_sizes
        .first()
        .map(|n| format!("frequency-{n}"))
        .ok_or_else(|| Error::invalid("no serve.whitelist and no whitelist.frequency_sizes configured"))
}

/// Model, whitelist and response index for serving. A stored index is
/// reused when it matches the checkpoint and whitelist, else rebuilt.
pub fn load_suggester(run: &RunDir, config: &RunConfig, whitelist_id: &str, checkpoint: Option<&Path>) -> Result<Suggester> {
    let ckpt = load_model(run, config, checkpoint)?;
    let wl_path = run.whitelist_path(whitelist_id);
    run.require(&wl_path, "whitelist")?;
    let whitelist = load_whitelist(&wl_path)?;
    let index_path = run.index_path(whitelist_id);
    let index = match ResponseIndex::load(&index_path, &whitelist, &ckpt.hash) {
        Ok(index) => index,
        Err(e) => {
            if index_path.exists() {
                log::warn!("rebuilding response index: {e}");
            }
            let index = ResponseIndex::build(&whitelist, &ckpt.model, &ckpt.hash)?;
            index.save(&index_path)?;
            index
        }
    };
    Suggester::new(Box::new(ckpt.model), whitelist, index, config.serve.top_k)
}
