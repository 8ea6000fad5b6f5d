use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::corpus::{extract_all, synth_corpus, TrainingExample};
use crate::embeddings::EmbeddingConfig;
use crate::encoder::{Activation, CellKind};
use crate::numerics::grad_check;

fn toy_config(dim: usize) -> ModelConfig {
    ModelConfig {
        embedding: EmbeddingConfig {
            dim,
            buckets: 1 << 12,
            seed: 3,
            ..EmbeddingConfig::default()
        },
        encoder: EncoderConfig {
            cell: CellKind::Sru,
            layers: 2,
            input_dim: dim,
            hidden_dim: dim,
            bidirectional: true,
            heads: 2,
            attention_dim: 4,
            activation: Activation::Tanh,
        },
    }
}

fn toy_model<T: Element>(dim: usize, seed: u64) -> DualEncoder<T> {
    let cfg = toy_config(dim);
    let emb = Arc::new(SubwordEmbedding::seeded(cfg.embedding.clone()).unwrap());
    DualEncoder::new(cfg, emb, seed).unwrap()
}

fn toks(s: &str) -> Vec<String> {
    s.split(' ').map(str::to_string).collect()
}

fn refs(v: &[Vec<String>]) -> Vec<&[String]> {
    v.iter().map(Vec::as_slice).collect()
}

/// Softmax cross-entropy over `[s+, s-...]` computed directly at 64-bit.
fn ce_oracle(c: &[Vec<f64>], p: &[Vec<f64>], n: &[Vec<f64>]) -> f64 {
    let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut total = 0.0;
    for (ci, pi) in c.iter().zip(p) {
        let mut scores = vec![d(ci, pi)];
        scores.extend(n.iter().map(|nj| d(ci, nj)));
        let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
        total += -(scores[0] - m - z.ln());
    }
    total / c.len() as f64
}

fn hinge_oracle(c: &[Vec<f64>], p: &[Vec<f64>], n: &[Vec<f64>], m: f64, absolute: bool) -> f64 {
    let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut total = 0.0;
    for (ci, pi) in c.iter().zip(p) {
        let sp = d(ci, pi);
        for nj in n {
            let t = m - sp + d(ci, nj);
            total += if absolute { t.abs() } else { t.max(0.0) };
        }
    }
    total / c.len() as f64
}

fn random_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.random_range(-scale..scale)).collect())
        .collect()
}

fn as_tensor(rows: &[Vec<f64>]) -> Tensor<f64> {
    Tensor::new(vec![rows.len(), rows[0].len()], rows.concat()).unwrap()
}

fn loss_on(rows: [&[Vec<f64>]; 3], cfg: &LossConfig) -> f64 {
    let mut g = Graph::new();
    let [c, p, n] = rows.map(|r| g.constant(as_tensor(r)));
    let l = cfg.apply(&mut g, c, p, n, None).unwrap();
    g.value(l).item().unwrap()
}

#[test]
fn score_is_a_plain_dot_product() {
    assert_eq!(score(&[1.0f32, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
    let v = [0.5f64, -2.0, 3.0];
    assert_eq!(score(&v, &v).unwrap(), 0.25 + 4.0 + 9.0);
    let r2: Vec<f64> = v.iter().map(|x| 2.0 * x).collect();
    assert_eq!(score(&v, &r2).unwrap(), 2.0 * score(&v, &v).unwrap());
    assert!(score(&[1.0f32], &[1.0, 2.0]).is_err());
}

#[test]
fn cross_entropy_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let (b, k, d) = (rng.random_range(1..6), rng.random_range(1..9), rng.random_range(1..7));
        let c = random_rows(&mut rng, b, d, 2.0);
        let p = random_rows(&mut rng, b, d, 2.0);
        let n = random_rows(&mut rng, k, d, 2.0);
        let got = loss_on([&c, &p, &n], &LossConfig::default());
        assert!((got - ce_oracle(&c, &p, &n)).abs() < 1e-5);
    }
}

#[test]
fn cross_entropy_limits() {
    // Equal scores: uniform softmax over k + 1 candidates.
    let zeros = |r| vec![vec![0.0; 4]; r];
    let got = loss_on([&zeros(3), &zeros(3), &zeros(200)], &LossConfig::default());
    assert!((got - 201f64.ln()).abs() < 1e-12);
    assert!((201f64.ln() - 5.3033).abs() < 1e-4);
    // A dominant positive drives the loss to zero.
    let c = vec![vec![1.0, 0.0]];
    let p = vec![vec![100.0, 0.0]];
    let n = vec![vec![0.0, 1.0], vec![-1.0, 0.0]];
    assert!(loss_on([&c, &p, &n], &LossConfig::default()) < 1e-30);
}

#[test]
fn hinge_cases() {
    let rect = LossConfig {
        kind: LossKind::Hinge,
        ..LossConfig::default()
    };
    let abs = LossConfig {
        hinge_form: HingeForm::Absolute,
        ..rect.clone()
    };
    // s+ = s- with k = 1 leaves exactly the margin.
    let c = vec![vec![1.0, 0.0]];
    let same = vec![vec![0.5, 0.0]];
    assert!((loss_on([&c, &same, &same], &rect) - 0.25).abs() < 1e-12);
    // Margin satisfied everywhere.
    let p = vec![vec![2.0, 0.0]];
    let n = vec![vec![1.0, 0.0], vec![0.0, 5.0]];
    assert_eq!(loss_on([&c, &p, &n], &rect), 0.0);
    // The absolute form still charges satisfied margins.
    assert!(loss_on([&c, &p, &n], &abs) > 0.0);

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let c = random_rows(&mut rng, 3, 4, 1.0);
        let p = random_rows(&mut rng, 3, 4, 1.0);
        let n = random_rows(&mut rng, 5, 4, 1.0);
        assert!((loss_on([&c, &p, &n], &rect) - hinge_oracle(&c, &p, &n, 0.25, false)).abs() < 1e-12);
        assert!((loss_on([&c, &p, &n], &abs) - hinge_oracle(&c, &p, &n, 0.25, true)).abs() < 1e-12);
    }
}

#[test]
fn loss_ignores_negative_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let c = random_rows(&mut rng, 4, 5, 1.0);
    let p = random_rows(&mut rng, 4, 5, 1.0);
    let n = random_rows(&mut rng, 7, 5, 1.0);
    let mut shuffled = n.clone();
    shuffled.reverse();
    shuffled.swap(0, 3);
    for cfg in [
        LossConfig::default(),
        LossConfig {
            kind: LossKind::Hinge,
            ..LossConfig::default()
        },
    ] {
        assert!((loss_on([&c, &p, &n], &cfg) - loss_on([&c, &p, &shuffled], &cfg)).abs() < 1e-12);
    }
}

#[test]
fn orthogonal_shift_leaves_scores_unchanged() {
    // Context lives in the first two coordinates; the shift in the third.
    let c = vec![vec![1.0, -0.5, 0.0]];
    let p = vec![vec![0.3, 0.2, 0.1]];
    let n = vec![vec![0.7, 0.1, -0.4], vec![-0.2, 0.9, 0.3]];
    let shift = |rows: &[Vec<f64>]| -> Vec<Vec<f64>> {
        rows.iter().map(|r| vec![r[0], r[1], r[2] + 4.0]).collect()
    };
    let cfg = LossConfig::default();
    assert_eq!(loss_on([&c, &p, &n], &cfg), loss_on([&c, &shift(&p), &shift(&n)], &cfg));
}

#[test]
fn argmax_survives_context_rescaling() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let c: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let cands = random_rows(&mut rng, 30, 6, 1.0);
    let best = |ctx: &[f64]| {
        (0..cands.len())
            .max_by(|&a, &b| score(ctx, &cands[a]).unwrap().total_cmp(&score(ctx, &cands[b]).unwrap()))
            .unwrap()
    };
    let scaled: Vec<f64> = c.iter().map(|v| v * 7.5).collect();
    assert_eq!(best(&c), best(&scaled));
}

#[test]
fn masked_negatives_drop_out_of_the_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let c = random_rows(&mut rng, 2, 3, 1.0);
    let p = random_rows(&mut rng, 2, 3, 1.0);
    let n = random_rows(&mut rng, 3, 3, 1.0);
    let mut g = Graph::new();
    let [cv, pv, nv] = [&c, &p, &n].map(|r| g.constant(as_tensor(r)));
    // Example 0 loses negative 1, example 1 keeps all.
    let mask = Tensor::new(vec![2, 3], vec![0.0, f64::NEG_INFINITY, 0.0, 0.0, 0.0, 0.0]).unwrap();
    let l = cross_entropy(&mut g, cv, pv, nv, Some(&mask)).unwrap();
    let got = g.value(l).item().unwrap();
    let n0 = vec![n[0].clone(), n[2].clone()];
    let expected = (ce_oracle(&c[..1], &p[..1], &n0) + ce_oracle(&c[1..], &p[1..], &n)) / 2.0;
    assert!((got - expected).abs() < 1e-12);
}

#[test]
fn full_model_gradients_match_finite_differences() {
    let model = toy_model::<f64>(8, 7);
    let ctx = vec![toks("<customer> my card was declined"), toks("<customer> hi"), toks("<customer> reset password please")];
    let pos = vec![toks("sorry about that"), toks("hello"), toks("sure , one moment")];
    let neg: Vec<Vec<String>> = ["no", "thanks for waiting", "goodbye", "which card ?", "ok"]
        .iter()
        .map(|s| toks(s))
        .collect();
    for cfg in [
        LossConfig::default(),
        LossConfig {
            kind: LossKind::Hinge,
            ..LossConfig::default()
        },
    ] {
        // Some gradients are ~1e-9 at init; a wider step keeps roundoff in the
        // difference quotient below the 1e-8 floor of the error measure.
        let report = grad_check(
            |g, vars| model.batch_loss(g, vars, &refs(&ctx), &refs(&pos), &refs(&neg), &cfg),
            model.store().tensors(),
            1e-3,
        )
        .unwrap();
        let name = model.store().name(model.store().ids().nth(report.worst.0).unwrap());
        assert!(report.max_rel_error < 1e-4, "{cfg:?}: {report:?} at {name}");
    }
}

#[test]
fn batch_encodes_b_plus_k_responses() {
    let model = toy_model::<f32>(8, 1);
    let ctx = vec![toks("a b"), toks("c")];
    let pos = vec![toks("x"), toks("y z")];
    let neg: Vec<Vec<String>> = (0..5).map(|i| toks(&format!("n{i}"))).collect();
    let mut g = Graph::new();
    let vars = model.store().bind(&mut g, true);
    model.reset_response_encoding_count();
    model
        .batch_loss(&mut g, &vars, &refs(&ctx), &refs(&pos), &refs(&neg), &LossConfig::default())
        .unwrap();
    assert_eq!(model.response_encoding_count(), 7);
}

#[test]
fn separate_weights_per_encoder() {
    let model = toy_model::<f32>(8, 2);
    let a = model.store().by_name("ctx.layer0.fwd.W").unwrap();
    let b = model.store().by_name("rsp.layer0.fwd.W").unwrap();
    assert_eq!(a.shape(), b.shape());
    assert_ne!(a.data(), b.data());
    let seq = [toks("same words here")];
    let c = model.encode_contexts(&refs(&seq)).unwrap();
    let r = model.encode_responses(&refs(&seq)).unwrap();
    assert_ne!(c.data(), r.data());
}

#[test]
fn chunked_encoding_matches_single_sequences() {
    let model = toy_model::<f32>(8, 3);
    let seqs: Vec<Vec<String>> = (0..150).map(|i| toks(&"w ".repeat(1 + i % 13).trim_end().replace('w', &format!("t{i}")))).collect();
    let all = model.encode_responses(&refs(&seqs)).unwrap();
    for i in [0, 63, 64, 149] {
        let one = model.encode_responses(&refs(&seqs[i..=i])).unwrap();
        for (a, b) in all.row(i).iter().zip(one.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }
}

#[test]
fn default_model_size_matches_reference() {
    let cfg = ModelConfig::default();
    let emb = Arc::new(SubwordEmbedding::seeded(cfg.embedding.clone()).unwrap());
    let model = DualEncoder::<f32>::new(cfg, emb, 0).unwrap();
    let d = model.describe();
    // Recurrent weights of both encoders; attention pooling is reported apart.
    let rel = (d.recurrent_parameters as f64 - 8.0e6).abs() / 8.0e6;
    assert!(rel < 0.01, "{}", d.recurrent_parameters);
    assert_eq!(d.total_parameters, d.recurrent_parameters + d.pooling_parameters);
    assert!(d.parameters.iter().any(|p| p.name == "ctx.pool.head15.W_a" && p.shape == vec![600, 64]));
}

fn tiny_corpus(n: usize, seed: u64) -> Vec<TrainingExample> {
    extract_all(&synth_corpus(n, 5, 0.0, seed).unwrap())
}

fn desk_training(seed: u64) -> TrainingConfig {
    TrainingConfig {
        batch_size: 16,
        negatives: 16,
        epochs: 2,
        warmup_steps: 20,
        lr_factor: 1.0,
        seed,
        validation_negatives: 20,
        ..TrainingConfig::default()
    }
}

#[test]
fn training_reduces_loss_and_is_reproducible() {
    let examples = tiny_corpus(50, 9);
    let (train, val) = examples.split_at(examples.len() * 4 / 5);
    let run = || {
        let mut t = Trainer::new(toy_model::<f32>(8, 5), train, desk_training(1)).unwrap();
        let report = t.train(train, val, None).unwrap();
        (report, t.into_model())
    };
    let (a, model_a) = run();
    let (b, model_b) = run();
    assert_eq!(a.metrics.len(), 2);
    assert!(a.metrics[1].train_loss < a.metrics[0].train_loss, "{:?}", a.metrics);
    let losses = |r: &TrainReport| r.metrics.iter().map(|m| (m.train_loss, m.val_loss, m.val_auc)).collect::<Vec<_>>();
    assert_eq!(losses(&a), losses(&b));
    assert_eq!(model_a.store().tensors(), model_b.store().tensors());
}

#[test]
fn initial_loss_is_near_uniform() {
    let examples = tiny_corpus(60, 4);
    let model = toy_model::<f32>(8, 6);
    let sampler = NegativeSampler::from_examples(&examples).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let k = 20;
    let batch = &examples[..10];
    let exclude: Vec<String> = batch.iter().map(|e| e.response_key()).collect();
    let picks = sampler.sample(&mut rng, k, &exclude).unwrap();
    let neg: Vec<&[String]> = picks.iter().map(|&i| sampler.tokens(i)).collect();
    let ctx: Vec<&[String]> = batch.iter().map(|e| e.context_or_role()).collect();
    let pos: Vec<&[String]> = batch.iter().map(|e| e.response_tokens.as_slice()).collect();
    let mut g = Graph::new();
    let vars = model.store().bind(&mut g, false);
    let l = model.batch_loss(&mut g, &vars, &ctx, &pos, &neg, &LossConfig::default()).unwrap();
    let v = f64::from(g.value(l).item().unwrap());
    let target = ((k + 1) as f64).ln();
    assert!((v - target).abs() / target < 0.02, "{v} vs {target}");
}

#[test]
fn trainer_step_counts_encodings() {
    let examples = tiny_corpus(40, 2);
    let mut t = Trainer::new(toy_model::<f32>(8, 1), &examples, desk_training(0)).unwrap();
    let batch: Vec<&TrainingExample> = examples.iter().take(8).collect();
    t.model().reset_response_encoding_count();
    t.step(&batch).unwrap();
    assert_eq!(t.model().response_encoding_count(), 8 + 16);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let examples = tiny_corpus(30, 1);
    let mut t = Trainer::new(toy_model::<f32>(8, 2), &examples, desk_training(0)).unwrap();
    t.run_epoch(&examples).unwrap();
    let path = dir.path().join("m.ckpt");
    let hash = save_checkpoint(&path, t.model(), Some(&t.state())).unwrap();
    assert_eq!(hash, checkpoint_hash(&path).unwrap());
    let loaded = load_checkpoint(&path, None).unwrap();
    assert_eq!(loaded.hash, hash);
    let state = loaded.state.as_ref().unwrap();
    assert_eq!(state.step, t.steps());
    assert_eq!(state.adam.second_moment, t.state().adam.second_moment);

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let pick = |rng: &mut ChaCha8Rng| &examples[rng.random_range(0..examples.len())];
    let pairs: Vec<(&TrainingExample, &TrainingExample)> = (0..100).map(|_| (pick(&mut rng), pick(&mut rng))).collect();
    let ctx: Vec<&[String]> = pairs.iter().map(|p| p.0.context_or_role()).collect();
    let rsp: Vec<&[String]> = pairs.iter().map(|p| p.1.response_tokens.as_slice()).collect();
    let scores = |m: &DualEncoder<f32>| {
        let c = m.encode_contexts(&ctx).unwrap();
        let r = m.encode_responses(&rsp).unwrap();
        (0..pairs.len()).map(|i| score(c.row(i), r.row(i)).unwrap().to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(scores(t.model()), scores(&loaded.model));

    // Saving twice gives identical bytes.
    let again = dir.path().join("again.ckpt");
    save_checkpoint(&again, &loaded.model, loaded.state.as_ref()).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn corrupted_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let model = toy_model::<f32>(8, 2);
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&path, &model, None).unwrap();
    let bytes = std::fs::read(&path).unwrap();

    let mut flipped = bytes.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 0x40;
    std::fs::write(&path, &flipped).unwrap();
    assert!(load_checkpoint(&path, None).is_err());

    std::fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
    assert!(load_checkpoint(&path, None).is_err());

    std::fs::write(&path, &bytes).unwrap();
    let other = Arc::new(
        SubwordEmbedding::seeded(EmbeddingConfig {
            seed: 99,
            ..toy_config(8).embedding
        })
        .unwrap(),
    );
    assert!(load_checkpoint(&path, Some(other)).is_err());
    assert!(load_checkpoint(&path, None).is_ok());
}

#[test]
fn non_finite_loss_names_the_batch() {
    let examples = tiny_corpus(20, 3);
    let mut model = toy_model::<f32>(8, 1);
    let id = model.store().id("rsp.pool.head0.v_a").unwrap();
    let shape = model.store().get(id).shape().to_vec();
    model.store_mut().set(id, Tensor::filled(&shape, f32::NAN)).unwrap();
    let mut t = Trainer::new(model, &examples, desk_training(0)).unwrap();
    let batch: Vec<&TrainingExample> = examples.iter().take(4).collect();
    let err = t.step(&batch).unwrap_err().to_string();
    assert!(err.contains("conversation") && err.contains(&batch[0].conversation_id), "{err}");
}

#[test]
fn training_writes_metrics_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let examples = tiny_corpus(40, 5);
    let (train, val) = examples.split_at(examples.len() * 4 / 5);
    let mut t = Trainer::new(toy_model::<f32>(8, 5), train, desk_training(2)).unwrap();
    let report = t.train(train, val, Some(dir.path())).unwrap();
    let log = std::fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in ["epoch", "step", "train_loss", "val_loss", "val_auc", "lr", "wall_ms"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }
    assert!(dir.path().join("epoch-001.ckpt").exists());
    assert!(dir.path().join("epoch-002.ckpt").exists());
    assert!(dir.path().join("best.ckpt").exists());
    assert!(report.best_epoch >= 1);
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let examples = tiny_corpus(40, 6);
    let cfg = desk_training(3);
    let mut full = Trainer::new(toy_model::<f32>(8, 4), &examples, cfg.clone()).unwrap();
    full.run_epoch(&examples).unwrap();
    full.run_epoch(&examples).unwrap();

    let mut first = Trainer::new(toy_model::<f32>(8, 4), &examples, cfg).unwrap();
    first.run_epoch(&examples).unwrap();
    let state = first.state();
    let mut second = Trainer::resume(first.into_model(), &examples, state).unwrap();
    second.run_epoch(&examples).unwrap();
    assert_eq!(full.model().store().tensors(), second.model().store().tensors());
}
