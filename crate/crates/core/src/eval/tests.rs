use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::*;
use crate::corpus::{response_tokens, TrainingExample};
use crate::dual_model::{Encoders, NegativeSampler};
use crate::error::Result;
use crate::numerics::Tensor;
use crate::whitelist::{build_frequency_whitelist, Provenance, Whitelist, WhitelistEntry, WhitelistMethod};

/// Scores are hash noise: contexts and responses map to pseudo-random
/// vectors derived from their tokens.
struct RandomEncoders;

fn hash_vec(tag: &str, seq: &[String]) -> Vec<f32> {
    let mut h = Sha256::new();
    h.update(tag);
    for t in seq {
        h.update(t.as_bytes());
        h.update([0]);
    }
    let seed = u64::from_le_bytes(h.finalize()[..8].try_into().unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..8).map(|_| rng.random_range(-1.0..1.0)).collect()
}

impl Encoders for RandomEncoders {
    fn output_dim(&self) -> usize {
        8
    }

    fn encode_contexts(&self, seqs: &[&[String]]) -> Result<Tensor<f32>> {
        Tensor::new(vec![seqs.len(), 8], seqs.iter().flat_map(|s| hash_vec("c", s)).collect())
    }

    fn encode_responses(&self, seqs: &[&[String]]) -> Result<Tensor<f32>> {
        Tensor::new(vec![seqs.len(), 8], seqs.iter().flat_map(|s| hash_vec("r", s)).collect())
    }
}

/// Perfect model: a context encodes to the one-hot of the response it
/// precedes, which is written into the context as `answer:<id>`.
struct OracleEncoders;

fn id_of(seq: &[String]) -> usize {
    seq.iter()
        .find_map(|t| t.strip_prefix('r').and_then(|n| n.parse().ok()))
        .unwrap_or(0)
}

impl Encoders for OracleEncoders {
    fn output_dim(&self) -> usize {
        64
    }

    fn encode_contexts(&self, seqs: &[&[String]]) -> Result<Tensor<f32>> {
        self.encode_responses(seqs)
    }

    fn encode_responses(&self, seqs: &[&[String]]) -> Result<Tensor<f32>> {
        let mut data = vec![0.0f32; seqs.len() * 64];
        for (i, s) in seqs.iter().enumerate() {
            data[i * 64 + id_of(s) % 64] = 1.0;
        }
        Tensor::new(vec![seqs.len(), 64], data)
    }
}

fn example(context: &str, response: &str) -> TrainingExample {
    TrainingExample {
        context_tokens: context.split(' ').map(String::from).collect(),
        response_tokens: response_tokens(response),
        response_text: response.to_string(),
        conversation_id: "c".into(),
        turn_index: 1,
    }
}

/// Examples whose responses `r0..r{distinct}` repeat with skewed frequency.
fn corpus(n: usize, distinct: usize, seed: u64) -> Vec<TrainingExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let r = (rng.random::<f64>().powi(2) * distinct as f64) as usize;
            example(&format!("ctx{i} r{r}"), &format!("r{r}"))
        })
        .collect()
}

#[test]
fn random_model_recall_is_chance() {
    let ex = corpus(1000, 200, 1);
    let pool = NegativeSampler::from_examples(&ex).unwrap();
    let r = recall_random(&RandomEncoders, &ex, &pool, 10, &[1, 10], 3).unwrap();
    assert!((r.at(1).unwrap() - 0.1).abs() < 0.03, "{r:?}");
    assert_eq!(r.at(10), Some(1.0));
    let one = recall_random(&RandomEncoders, &ex, &pool, 1, &[1], 3).unwrap();
    assert_eq!(one.at(1), Some(1.0));
    assert!(recall_random(&RandomEncoders, &ex, &pool, pool.len() + 1, &[1], 3).is_err());
}

#[test]
fn oracle_model_recalls_everything() {
    let ex = corpus(200, 40, 2);
    let pool = NegativeSampler::from_examples(&ex).unwrap();
    let r = recall_random(&OracleEncoders, &ex, &pool, 20, &[1], 0).unwrap();
    assert_eq!(r.at(1), Some(1.0));
}

fn whitelist_of(keys: &[&str]) -> Whitelist {
    let entries = keys
        .iter()
        .map(|k| WhitelistEntry {
            key: k.to_string(),
            text: k.to_string(),
            frequency: 1,
            cluster_id: None,
        })
        .collect();
    Whitelist::new(WhitelistMethod::Frequency, keys.len().max(1), Provenance::default(), entries).unwrap()
}

#[test]
fn whitelist_protocols() {
    let ex = corpus(300, 30, 4);
    let ks = [1, 3, 5, 10];
    let empty = whitelist_of(&[]);
    assert_eq!(recall_whitelist_plus(&RandomEncoders, &ex, &empty, &[1]).unwrap().at(1), Some(1.0));
    assert_eq!(coverage(&empty, &ex).unwrap(), 0.0);
    assert!(matches!(
        recall_whitelist_restricted(&RandomEncoders, &ex, &empty, &[1]),
        Err(crate::Error::NoCoverage(_))
    ));

    let full = build_frequency_whitelist(&ex, 1000, Provenance::default()).unwrap();
    assert_eq!(coverage(&full, &ex).unwrap(), 1.0);
    let plus = recall_whitelist_plus(&RandomEncoders, &ex, &full, &ks).unwrap();
    let restricted = recall_whitelist_restricted(&RandomEncoders, &ex, &full, &ks).unwrap();
    assert_eq!(plus.recall, restricted.recall);
    assert!(plus.recall.windows(2).all(|w| w[0] <= w[1]));

    let half = build_frequency_whitelist(&ex, 10, Provenance::default()).unwrap();
    let cov = coverage(&half, &ex).unwrap();
    let restricted = recall_whitelist_restricted(&RandomEncoders, &ex, &half, &ks).unwrap();
    assert_eq!(restricted.support, (cov * ex.len() as f64).round() as usize);
    assert_eq!(recall_whitelist_plus(&OracleEncoders, &ex, &half, &[1]).unwrap().at(1), Some(1.0));
}

#[test]
fn ranking_ties_go_against_the_true_response() {
    assert_eq!(pessimistic_rank(1.0, [0.5, 1.0, 2.0]), 3);
    assert_eq!(pessimistic_rank(1.0, []), 1);
}

#[test]
fn random_scores_give_diagonal_auc_at_p() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let pairs: Vec<ScoredPair> = (0..100_000).map(|i| ScoredPair::new(rng.random(), i % 2 == 0)).collect();
    // Diagonal ROC: area p^2 / 2 up to p, renormalized to p / 2.
    let v = auc_at_p(&pairs, 0.1).unwrap();
    assert!((v - 0.05).abs() < 0.01, "{v}");
    assert!((auc(&pairs).unwrap() - 0.5).abs() < 0.01);
}

#[test]
fn report_is_deterministic_and_complete() {
    let ex = corpus(400, 60, 7);
    let (train, test) = ex.split_at(300);
    let pool = NegativeSampler::from_examples(train).unwrap();
    let wl = build_frequency_whitelist(train, 20, Provenance::default()).unwrap();
    let cfg = EvalConfig {
        recall_ns: vec![2, 10, 10_000],
        ..EvalConfig::default()
    };
    let run = || eval_report(&RandomEncoders, test, &pool, std::slice::from_ref(&wl), &cfg, ReportInputs::default()).unwrap();
    let a = run();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&run()).unwrap());
    assert_eq!(a.recall_random.len(), 2);
    assert_eq!(a.failures.len(), 1);
    assert!(a.failures[0].contains("n=10000"));
    assert_eq!(a.whitelists.len(), 1);
    assert!(a.whitelists[0].bleu.is_some());
    let auc = a.auc.as_ref().unwrap();
    assert_eq!(auc.auc_at_p.len(), 3);
    let table = render_table(&a);
    assert!(table.contains("R@1") && table.contains("frequency-20+") && table.contains("FAILED"));
}
