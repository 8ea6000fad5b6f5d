//! Acceptance criteria 1 to 10, one line per criterion.
//!
//! Run with `cargo test -p dualreply --test acceptance`. Set
//! `ACCEPTANCE_ONLY=4,5` to run a subset.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use dualreply::config::RunConfig;
use dualreply::corpus::{extract_all, normalize_response, response_pools, split_corpus, synth_corpus, SplitFractions, TrainingExample};
use dualreply::dual_model::{DualEncoder, LossConfig, ModelConfig, NegativeSampler, Trainer, TrainingConfig};
use dualreply::embeddings::{EmbeddingConfig, SubwordEmbedding};
use dualreply::encoder::{Activation, CellKind, EncoderConfig};
use dualreply::eval::{auc, bleu, EvalReport, ScoredPair};
use dualreply::numerics::{grad_check, Graph, Tensor};
use dualreply::pipeline::{self, file_hash, RunDir};
use dualreply::serve::{self, top_k, BenchConfig, ResponseIndex, SuggestResponse};
use dualreply::whitelist::{build_clustering_whitelist, build_frequency_whitelist, kmeans, KMeansConfig, Provenance, WhitelistMethod};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tower::ServiceExt;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn desk_config() -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.json");
    RunConfig::load(&path).expect("configs/desk.json")
}

fn toy_model_config(dim: usize, layers: usize) -> ModelConfig {
    ModelConfig {
        embedding: EmbeddingConfig {
            dim,
            buckets: 1 << 12,
            seed: 3,
            ..EmbeddingConfig::default()
        },
        encoder: EncoderConfig {
            cell: CellKind::Sru,
            layers,
            input_dim: dim,
            hidden_dim: dim,
            bidirectional: true,
            heads: 2,
            attention_dim: 4,
            activation: Activation::Tanh,
        },
    }
}

fn model_from(config: ModelConfig, seed: u64) -> DualEncoder<f32> {
    let emb = Arc::new(SubwordEmbedding::seeded(config.embedding.clone()).unwrap());
    DualEncoder::new(config, emb, seed).unwrap()
}

fn refs(v: &[Vec<String>]) -> Vec<&[String]> {
    v.iter().map(Vec::as_slice).collect()
}

/// Batch contexts, positives and `k` sampled negatives from a synthetic corpus.
fn batch_inputs(examples: &[TrainingExample], b: usize, k: usize, seed: u64) -> (Vec<Vec<String>>, Vec<Vec<String>>, Vec<Vec<String>>) {
    let sampler = NegativeSampler::from_examples(examples).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch = &examples[..b];
    let exclude: Vec<String> = batch.iter().map(|e| e.response_key()).collect();
    let picks = sampler.sample(&mut rng, k, &exclude).unwrap();
    (
        batch.iter().map(|e| e.context_or_role().to_vec()).collect(),
        batch.iter().map(|e| e.response_tokens.clone()).collect(),
        picks.iter().map(|&i| sampler.tokens(i).to_vec()).collect(),
    )
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let model = model_from(toy_model_config(8, 2), 1).cast::<f64>();
    let examples = extract_all(&synth_corpus(20, 3, 0.0, 1).unwrap());
    let (ctx, pos, neg) = batch_inputs(&examples, 3, 5, 2);
    let names: Vec<String> = model.store().iter().map(|(n, _)| n.to_string()).collect();
    let inputs: Vec<Tensor<f64>> = model.store().tensors().to_vec();
    let report = grad_check(
        |g: &mut Graph<f64>, vars| {
            model.batch_loss(g, vars, &refs(&ctx), &refs(&pos), &refs(&neg), &LossConfig::default())
        },
        &inputs,
        1e-3,
    )
    .map_err(err)?;
    let secs = start.elapsed().as_secs_f64();
    let detail = format!(
        "max relative error {:.2e} over {} coordinates of {} parameters (worst {}), {:.1}s",
        report.max_rel_error,
        report.coordinates,
        names.len(),
        names[report.worst.0],
        secs
    );
    check(report.max_rel_error < 1e-4 && secs < 60.0 && report.coordinates == model.store().num_scalars(), detail)
}

fn criterion_2() -> Outcome {
    let examples = extract_all(&synth_corpus(400, 20, 0.1, 5).unwrap());
    let model = model_from(toy_model_config(8, 2), 7);
    let mut details = Vec::new();
    let mut ok = true;
    for k in [10, 50, 200] {
        let (ctx, pos, neg) = batch_inputs(&examples, 16, k, k as u64);
        let mut g = Graph::new();
        let vars = model.store().bind(&mut g, false);
        let l = model
            .batch_loss(&mut g, &vars, &refs(&ctx), &refs(&pos), &refs(&neg), &LossConfig::default())
            .map_err(err)?;
        let v = f64::from(g.value(l).item().unwrap());
        let target = ((k + 1) as f64).ln();
        let rel = (v - target).abs() / target;
        ok &= rel < 0.02;
        details.push(format!("k={k}: {v:.4} vs ln({}) = {target:.4} ({:.2}%)", k + 1, 100.0 * rel));
    }
    check(ok, details.join("; "))
}

fn criterion_3() -> Outcome {
    let examples = extract_all(&synth_corpus(600, 20, 0.1, 3).unwrap());
    let mut details = Vec::new();
    let mut ok = true;
    for (b, k) in [(8, 16), (200, 200)] {
        let config = TrainingConfig {
            batch_size: b,
            negatives: k,
            warmup_steps: 10,
            ..TrainingConfig::default()
        };
        let mut trainer = Trainer::new(model_from(toy_model_config(8, 2), 1), &examples, config).map_err(err)?;
        let batch: Vec<&TrainingExample> = examples.iter().take(b).collect();
        trainer.model().reset_response_encoding_count();
        trainer.step(&batch).map_err(err)?;
        let n = trainer.model().response_encoding_count();
        ok &= n == (b + k) as u64;
        details.push(format!("(b={b}, k={k}): {n} responses encoded"));
    }
    check(ok, details.join("; "))
}

/// Runs synth-data, split, train, whitelists and eval into `dir`.
fn run_pipeline(dir: &Path, config: &RunConfig) -> dualreply::Result<EvalReport> {
    let run = RunDir::new(dir);
    pipeline::synth_stage(&run, config)?;
    pipeline::split_stage(&run, config)?;
    pipeline::train_stage(&run, config)?;
    for &n in &config.whitelist.frequency_sizes {
        pipeline::whitelist_stage(&run, config, WhitelistMethod::Frequency, n)?;
    }
    for &n in &config.whitelist.clustering_sizes {
        pipeline::whitelist_stage(&run, config, WhitelistMethod::Clustering, n)?;
    }
    pipeline::eval_stage(&run, config, None)
}

struct Trained {
    dir: PathBuf,
    config: RunConfig,
    report: EvalReport,
    seconds: f64,
}

fn criterion_4(trained: &Option<Trained>) -> Outcome {
    let t = trained.as_ref().ok_or("pipeline did not complete")?;
    let r10 = t
        .report
        .recall_random
        .iter()
        .find(|r| r.n == Some(10))
        .and_then(|r| r.at(1))
        .ok_or("R_10@1 missing")?;
    let pooled = t.report.auc.as_ref().map(|a| a.auc).ok_or("AUC missing")?;
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    check(
        r10 >= 0.85 && pooled >= 0.95 && t.seconds < 1800.0,
        format!(
            "R_10@1 {r10:.3} (>= 0.85), pooled AUC {pooled:.3} (>= 0.95), {} epochs in {:.0}s on {cores} core(s)",
            t.config.training.epochs, t.seconds
        ),
    )
}

fn criterion_5(trained: &Option<Trained>) -> Outcome {
    let t = trained.as_ref().ok_or("pipeline did not complete")?;
    let at = |n: usize| {
        t.report
            .recall_random
            .iter()
            .find(|r| r.n == Some(n))
            .and_then(|r| r.at(1))
            .ok_or(format!("R_{n}@1 missing"))
    };
    let (a, b, c) = (at(10)?, at(100)?, at(1000)?);
    check(
        a - b >= 0.03 && b - c >= 0.03,
        format!("R_n@1 for n = 10, 100, 1000: {a:.3}, {b:.3}, {c:.3}"),
    )
}

/// O(P·N) pair counting.
fn brute_auc(pairs: &[ScoredPair]) -> f64 {
    let pos: Vec<f64> = pairs.iter().filter(|p| p.label).map(|p| p.score).collect();
    let neg: Vec<f64> = pairs.iter().filter(|p| !p.label).map(|p| p.score).collect();
    let mut wins = 0.0;
    for &p in &pos {
        for &n in &neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_auc: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(2..=1000);
        let levels = rng.random_range(2..50);
        let mut pairs: Vec<ScoredPair> = (0..n)
            .map(|_| ScoredPair::new(rng.random_range(0..levels) as f64 / levels as f64, rng.random_bool(0.3)))
            .collect();
        pairs[0].label = true;
        pairs[1].label = false;
        worst_auc = worst_auc.max((auc(&pairs).map_err(err)? - brute_auc(&pairs)).abs());
    }

    let mut topk_mismatch = 0;
    for trial in 0..1000 {
        let n = if trial % 100 == 0 { 10_000 } else { rng.random_range(1..=2000) };
        let dim = rng.random_range(1..=16);
        let coarse = trial % 3 == 0;
        let mut draw = || {
            if coarse {
                rng.random_range(-2..=2) as f32
            } else {
                rng.random_range(-1.0..1.0)
            }
        };
        let data: Vec<f32> = (0..n * dim).map(|_| draw()).collect();
        let ctx: Vec<f32> = (0..dim).map(|_| draw()).collect();
        let k = 1 + trial % 20;
        let index = ResponseIndex::from_matrix(Tensor::new(vec![n, dim], data).unwrap(), "w", "c").map_err(err)?;
        let mut oracle: Vec<(usize, f32)> = (0..n).map(|i| (i, dualreply::numerics::dot(&ctx, index.row(i)))).collect();
        oracle.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        oracle.truncate(k);
        let got: Vec<(usize, f32)> = top_k(&ctx, &index, k).map_err(err)?.iter().map(|r| (r.index, r.score)).collect();
        topk_mismatch += usize::from(got != oracle);
    }

    let corpus = ["the agent will reset your password now", "thanks for waiting", "is there anything else"];
    let identity = bleu(&corpus, &corpus).map_err(err)?;
    let short = bleu(&["a b c d e"], &["a b c d"]).map_err(err)?;
    let expected = (-0.25f64).exp();
    check(
        worst_auc <= 1e-12 && topk_mismatch == 0 && (identity - 1.0).abs() < 1e-12 && (short - expected).abs() < 1e-9,
        format!(
            "AUC max deviation {worst_auc:.1e} over 200 instances; top_k mismatches {topk_mismatch}/1000; BLEU identity {identity}, single pair {short:.10} vs e^-0.25 = {expected:.10}"
        ),
    )
}

fn criterion_7() -> Outcome {
    let examples = extract_all(&synth_corpus(2000, 20, 0.1, 11).unwrap());
    let small = build_frequency_whitelist(&examples, 500, Provenance::default()).map_err(err)?;
    let large = build_frequency_whitelist(&examples, 2000, Provenance::default()).map_err(err)?;
    let nested = small.entries().iter().all(|e| large.contains(&e.key));
    let cov_small = dualreply::eval::coverage(&small, &examples).map_err(err)?;
    let cov_large = dualreply::eval::coverage(&large, &examples).map_err(err)?;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut monotone = 0;
    for seed in 0..100 {
        let n = rng.random_range(20..200);
        let dim = rng.random_range(1..8);
        let points: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let k = rng.random_range(2..10);
        let cfg = KMeansConfig {
            normalize: seed % 2 == 0,
            ..KMeansConfig::default()
        };
        let r = kmeans(&points, k, &cfg, seed).map_err(err)?;
        monotone += usize::from(r.inertia.windows(2).all(|w| w[1] <= w[0]));
    }

    // Five intent pools plus the shared closings, trained with the desk
    // settings, clustered into five groups per seed.
    let pools = response_pools(5);
    let pool_of: HashMap<String, usize> = pools
        .iter()
        .enumerate()
        .flat_map(|(i, p)| p.responses.iter().map(move |r| (normalize_response(r), i)))
        .collect();
    let cfg = desk_config();
    let mut per_seed = Vec::new();
    for seed in 0..5u64 {
        let convs = synth_corpus(cfg.corpus.synth.conversations, 5, cfg.corpus.synth.noise_rate, 100 + seed).unwrap();
        let split = split_corpus(&convs, SplitFractions::default(), seed).map_err(err)?;
        let train = extract_all(&split.train);
        let mut tc = cfg.training.clone();
        tc.seed = seed;
        let mut trainer = Trainer::new(model_from(cfg.model.clone(), seed), &train, tc).map_err(err)?;
        trainer.train(&train, &[], None).map_err(err)?;
        let wl = build_clustering_whitelist(&train, trainer.model(), 5, &cfg.whitelist.kmeans, seed, Provenance::default()).map_err(err)?;
        let distinct: BTreeSet<usize> = wl.entries().iter().map(|e| pool_of[&e.key]).collect();
        per_seed.push(distinct.len());
    }
    check(
        nested && cov_small <= cov_large && monotone == 100 && per_seed.iter().all(|&d| d >= 4),
        format!(
            "N=500 nested in N=2000: {nested}; coverage {cov_small:.4} <= {cov_large:.4}; inertia non-increasing on {monotone}/100 datasets; distinct pools at k=5 per seed {per_seed:?}"
        ),
    )
}

fn criterion_8() -> Outcome {
    let emb = SubwordEmbedding::seeded(EmbeddingConfig {
        buckets: 1 << 16,
        ..EmbeddingConfig::default()
    })
    .map_err(err)?;
    let bench = BenchConfig {
        samples: 1000,
        warmup: 50,
        context_length: 500,
        seed: 8,
    };
    let sru = EncoderConfig::default();
    let lstm = EncoderConfig {
        cell: CellKind::Lstm,
        layers: 2,
        ..EncoderConfig::default()
    };
    let s = serve::bench_encoder(&sru, &emb, &bench).map_err(err)?;
    let l = serve::bench_encoder(&lstm, &emb, &bench).map_err(err)?;
    let matched = (s.parameters as f64 - l.parameters as f64).abs() / (s.parameters.max(l.parameters) as f64);
    let index = serve::random_index(10_000, sru.output_dim(), 8).map_err(err)?;
    let r = serve::bench_rank(&index, 10, &bench).map_err(err)?;
    let speedup = l.mean_ms / s.mean_ms;
    let rank_ratio = r.mean_ms / s.mean_ms;
    check(
        matched <= 0.10 && speedup >= 2.5 && r.mean_ms <= 5.0 && rank_ratio < 0.25,
        format!(
            "SRU4 {:.1} ms ({} params) vs LSTM2 {:.1} ms ({} params, {:.1}% apart): {speedup:.2}x; rank 10,000 x {}: {:.3} ms = {rank_ratio:.3}x encode; single thread on {}",
            s.mean_ms,
            s.parameters,
            l.mean_ms,
            l.parameters,
            100.0 * matched,
            index.dim(),
            r.mean_ms,
            s.cpu_model
        ),
    )
}

/// Artifacts compared across runs; metrics.jsonl holds wall-clock timings.
fn artifacts(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for sub in ["checkpoints", "whitelists", "reports", "data"] {
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir.join(sub))
            .map(|rd| rd.filter_map(|e| e.ok().map(|e| e.path())).collect())
            .unwrap_or_default();
        files.retain(|p| p.file_name().is_some_and(|n| n != "metrics.jsonl"));
        files.sort();
        out.extend(files);
    }
    out.push(dir.join("manifest.json"));
    out
}

fn criterion_9() -> Outcome {
    let mut config = desk_config();
    config.corpus.synth.conversations = 400;
    config.training.epochs = 2;
    config.whitelist.frequency_sizes = vec![50];
    config.whitelist.clustering_sizes = vec![20];
    config.eval.recall_ns = vec![10, 100];
    let a = tempfile::tempdir().map_err(err)?;
    let b = tempfile::tempdir().map_err(err)?;
    run_pipeline(a.path(), &config).map_err(err)?;
    run_pipeline(b.path(), &config).map_err(err)?;
    let files_a = artifacts(a.path());
    let files_b = artifacts(b.path());
    let rel = |root: &Path, v: &[PathBuf]| v.iter().map(|p| p.strip_prefix(root).unwrap().to_path_buf()).collect::<Vec<_>>();
    if rel(a.path(), &files_a) != rel(b.path(), &files_b) {
        return Err("runs produced different file sets".into());
    }
    let mut differing = Vec::new();
    for (x, y) in files_a.iter().zip(&files_b) {
        if std::fs::read(x).map_err(err)? != std::fs::read(y).map_err(err)? {
            differing.push(x.strip_prefix(a.path()).unwrap().display().to_string());
        }
    }
    check(
        differing.is_empty(),
        format!("{} artifacts compared across two runs, differing: {differing:?}", files_a.len()),
    )
}

async fn call(router: &axum::Router, method: &str, uri: &str, body: &str) -> (StatusCode, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let resp = router.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec())
}

fn criterion_10(trained: &Option<Trained>) -> Outcome {
    let t = trained.as_ref().ok_or("pipeline did not complete")?;
    let run = RunDir::new(&t.dir);
    let id = pipeline::default_whitelist_id(&t.config).map_err(err)?;
    let suggester = Arc::new(pipeline::load_suggester(&run, &t.config, &id, None).map_err(err)?);
    let n = suggester.whitelist().len();
    let router = serve::router(Arc::clone(&suggester), None);
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().map_err(err)?;
    rt.block_on(async {
        let mut counts = Vec::new();
        for k in [1, 5, n + 10] {
            let body = format!(r#"{{"turns": [{{"role": "customer", "text": "hi, my monthly bill is wrong"}}], "top_k": {k}}}"#);
            let (status, bytes) = call(&router, "POST", "/suggest", &body).await;
            if status != StatusCode::OK {
                return Err(format!("/suggest returned {status}"));
            }
            let resp: SuggestResponse = serde_json::from_slice(&bytes).map_err(err)?;
            if resp.suggestions.len() != k.min(n) || !resp.suggestions.windows(2).all(|w| w[0].score >= w[1].score) {
                return Err(format!("top_k={k}: {} suggestions, order broken or wrong count", resp.suggestions.len()));
            }
            counts.push(resp.suggestions.len());
        }
        let (bad, _) = call(&router, "POST", "/suggest", "{\"turns\": [").await;
        let (empty, _) = call(&router, "POST", "/suggest", r#"{"turns": []}"#).await;
        let (status, bytes) = call(&router, "GET", "/healthz", "").await;
        let health: serde_json::Value = serde_json::from_slice(&bytes).map_err(err)?;
        let ckpt_on_disk = file_hash(&run.best_checkpoint()).map_err(err)?;
        let wl_on_disk = file_hash(&run.whitelist_path(&id)).map_err(err)?;
        let hashes_match = health["checkpoint_hash"] == ckpt_on_disk.as_str() && health["whitelist_hash"] == wl_on_disk.as_str();
        check(
            bad == StatusCode::BAD_REQUEST && empty == StatusCode::BAD_REQUEST && status == StatusCode::OK && hashes_match,
            format!(
                "suggestion counts {counts:?} for top_k 1, 5, N+10 over {id} (N={n}); malformed -> {bad}, empty turns -> {empty}; /healthz hashes match disk: {hashes_match}"
            ),
        )
    })
}

fn main() -> ExitCode {
    let only: Option<BTreeSet<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |i: usize| only.as_ref().is_none_or(|s| s.contains(&i));

    let mut trained = None;
    let _workdir = tempfile::tempdir().expect("tempdir");
    if [4, 5, 10].into_iter().any(wanted) {
        let config = desk_config();
        let start = Instant::now();
        match run_pipeline(_workdir.path(), &config) {
            Ok(report) => {
                trained = Some(Trained {
                    dir: _workdir.path().to_path_buf(),
                    config,
                    report,
                    seconds: start.elapsed().as_secs_f64(),
                })
            }
            Err(e) => println!("desk pipeline failed: {e}"),
        }
    }

    let criteria: Vec<(usize, &str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        (1, "gradient correctness", Box::new(criterion_1)),
        (2, "loss sanity", Box::new(criterion_2)),
        (3, "encoding-count contract", Box::new(criterion_3)),
        (4, "end-to-end learning", Box::new(|| criterion_4(&trained))),
        (5, "recall-vs-candidate-set trend", Box::new(|| criterion_5(&trained))),
        (6, "metric oracle equivalence", Box::new(criterion_6)),
        (7, "whitelist properties", Box::new(criterion_7)),
        (8, "speed ratios", Box::new(criterion_8)),
        (9, "reproducibility", Box::new(criterion_9)),
        (10, "service contract", Box::new(|| criterion_10(&trained))),
    ];
    let mut failed = 0;
    for (i, name, f) in &criteria {
        if !wanted(*i) {
            continue;
        }
        let (tag, detail) = match f() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {i:>2} {tag}  {name}: {detail}");
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
