use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::index::{top_k, ResponseIndex};
use crate::embeddings::SubwordEmbedding;
use crate::encoder::{CellKind, EncoderConfig, EncoderLayout};
use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub samples: usize,
    /// Leading samples run but excluded from the statistics.
    pub warmup: usize,
    pub context_length: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            samples: 1000,
            warmup: 50,
            context_length: 500,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    /// `sru`, `lstm` or `rank`.
    pub kind: String,
    pub layers: usize,
    pub hidden_dim: usize,
    /// Recurrent parameters for encoders, index entries for ranking.
    pub parameters: usize,
    pub context_length: usize,
    pub samples: usize,
    pub warmup: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p99_ms: f64,
    pub single_thread: bool,
    pub cpu_model: String,
}

/// CPU model string of the first processor, or `unknown`.
pub fn cpu_model() -> String {
    std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split_once(':'))
                .map(|(_, v)| v.trim().to_string())
        })
        .unwrap_or_else(|| "unknown".into())
}

struct Stats {
    mean: f64,
    median: f64,
    p99: f64,
}

fn stats(mut ms: Vec<f64>) -> Stats {
    ms.sort_by(f64::total_cmp);
    let n = ms.len();
    let at = |q: f64| ms[((q * n as f64).ceil() as usize).clamp(1, n) - 1];
    Stats {
        mean: ms.iter().sum::<f64>() / n as f64,
        median: at(0.5),
        p99: at(0.99),
    }
}

/// Times `f` over `warmup + samples` calls on the calling thread.
fn time_samples(config: &BenchConfig, mut f: impl FnMut(usize) -> Result<()>) -> Result<Stats> {
    if config.samples == 0 {
        return Err(Error::invalid("benchmark needs at least one sample"));
    }
    let mut ms = Vec::with_capacity(config.samples);
    for i in 0..config.warmup + config.samples {
        let start = Instant::now();
        f(i)?;
        let elapsed = start.elapsed().as_secs_f64() * 1e3;
        if i >= config.warmup {
            ms.push(elapsed.max(1e-6));
        }
    }
    Ok(stats(ms))
}

/// Single-context encode latency of a randomly initialized encoder over
/// random `context_length`-token inputs.
pub fn bench_encoder(encoder: &EncoderConfig, embedding: &SubwordEmbedding, config: &BenchConfig) -> Result<BenchReport> {
    if encoder.input_dim != embedding.dim() {
        return Err(Error::invalid(format!(
            "encoder input dim {} does not match embedding dim {}",
            encoder.input_dim,
            embedding.dim()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut store = ParamStore::<f32>::new();
    let layout = EncoderLayout::init(encoder, "bench", &mut store, &mut rng)?;
    let vocab: Vec<String> = (0..500).map(|i| format!("tok{i}")).collect();
    let contexts: Vec<Vec<String>> = (0..16)
        .map(|_| {
            (0..config.context_length)
                .map(|_| vocab[rng.random_range(0..vocab.len())].clone())
                .collect()
        })
        .collect();
    for c in &contexts {
        embedding.embed_sequence(c);
    }
    let s = time_samples(config, |i| {
        let ctx = contexts[i % contexts.len()].as_slice();
        layout.encode(&store, embedding, &[ctx]).map(drop)
    })?;
    Ok(BenchReport {
        kind: match encoder.cell {
            CellKind::Sru => "sru".into(),
            CellKind::Lstm => "lstm".into(),
        },
        layers: encoder.layers,
        hidden_dim: encoder.hidden_dim,
        parameters: layout.recurrent_param_count(&store),
        context_length: config.context_length,
        samples: config.samples,
        warmup: config.warmup,
        mean_ms: s.mean,
        median_ms: s.median,
        p99_ms: s.p99,
        single_thread: true,
        cpu_model: cpu_model(),
    })
}

/// Latency of `top_k(·, index, k)` for random context vectors.
pub fn bench_rank(index: &ResponseIndex, k: usize, config: &BenchConfig) -> Result<BenchReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let queries: Vec<Tensor<f32>> = (0..64)
        .map(|_| Tensor::vector((0..index.dim()).map(|_| rng.random_range(-1.0..1.0)).collect()))
        .collect();
    let s = time_samples(config, |i| top_k(queries[i % queries.len()].data(), index, k).map(drop))?;
    Ok(BenchReport {
        kind: "rank".into(),
        layers: 0,
        hidden_dim: index.dim(),
        parameters: index.len(),
        context_length: 0,
        samples: config.samples,
        warmup: config.warmup,
        mean_ms: s.mean,
        median_ms: s.median,
        p99_ms: s.p99,
        single_thread: true,
        cpu_model: cpu_model(),
    })
}

/// A random index of `rows x dim` for ranking benchmarks.
pub fn random_index(rows: usize, dim: usize, seed: u64) -> Result<ResponseIndex> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    ResponseIndex::from_matrix(Tensor::new(vec![rows, dim], data)?, "random", "random")
}
