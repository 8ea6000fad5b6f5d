use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::TrainingExample;
use crate::dual_model::{Encoders, NegativeSampler};
use crate::error::{Error, Result};
use crate::numerics::{dot, Tensor};
use crate::whitelist::Whitelist;

/// Recall@k values for one candidate protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct RecallResult {
    /// Candidate-set size for the random protocol.
    pub n: Option<usize>,
    pub ks: Vec<usize>,
    pub recall: Vec<f64>,
    /// Examples the values were computed over.
    pub support: usize,
}

impl RecallResult {
    pub fn at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.recall[i])
    }
}

/// Context and true-response encodings of a fixed example list, computed once
/// and shared between protocols.
pub struct EncodedExamples<'a> {
    pub examples: &'a [TrainingExample],
    pub keys: Vec<String>,
    pub contexts: Tensor<f32>,
    pub responses: Tensor<f32>,
}

impl<'a> EncodedExamples<'a> {
    pub fn new<E: Encoders + ?Sized>(model: &E, examples: &'a [TrainingExample]) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::invalid("evaluation needs at least one example"));
        }
        let ctx: Vec<&[String]> = examples.iter().map(|e| e.context_or_role()).collect();
        let rsp: Vec<&[String]> = examples.iter().map(|e| e.response_tokens.as_slice()).collect();
        Ok(EncodedExamples {
            examples,
            keys: examples.iter().map(|e| e.response_key()).collect(),
            contexts: model.encode_contexts(&ctx)?,
            responses: model.encode_responses(&rsp)?,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    fn true_score(&self, i: usize) -> f32 {
        dot(self.contexts.row(i), self.responses.row(i))
    }
}

/// 1-based rank of the true response; candidates scoring equal to it rank
/// ahead of it.
pub fn pessimistic_rank(true_score: f32, others: impl IntoIterator<Item = f32>) -> usize {
    1 + others.into_iter().filter(|&s| s >= true_score).count()
}

fn check_ks(ks: &[usize]) -> Result<()> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::invalid("recall needs a non-empty list of k >= 1"));
    }
    Ok(())
}

fn recall_from_ranks(ranks: &[usize], ks: &[usize], n: Option<usize>) -> RecallResult {
    let recall = ks
        .iter()
        .map(|&k| ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64)
        .collect();
    RecallResult {
        n,
        ks: ks.to_vec(),
        recall,
        support: ranks.len(),
    }
}

fn encode_texts<E: Encoders + ?Sized>(model: &E, seqs: &[Vec<String>]) -> Result<Tensor<f32>> {
    let refs: Vec<&[String]> = seqs.iter().map(Vec::as_slice).collect();
    model.encode_responses(&refs)
}

/// The true response against `n - 1` frequency-weighted draws from `pool`
/// made without replacement and excluding the true key.
pub fn recall_random<E: Encoders + ?Sized>(
    model: &E,
    examples: &[TrainingExample],
    pool: &NegativeSampler,
    n: usize,
    ks: &[usize],
    seed: u64,
) -> Result<RecallResult> {
    let enc = EncodedExamples::new(model, examples)?;
    let pool_tokens: Vec<Vec<String>> = (0..pool.len()).map(|i| pool.tokens(i).to_vec()).collect();
    let pool_enc = encode_texts(model, &pool_tokens)?;
    recall_random_encoded(&enc, pool, &pool_enc, n, ks, seed)
}

/// [`recall_random`] with the pool's response encodings precomputed.
pub fn recall_random_encoded(
    enc: &EncodedExamples<'_>,
    pool: &NegativeSampler,
    pool_enc: &Tensor<f32>,
    n: usize,
    ks: &[usize],
    seed: u64,
) -> Result<RecallResult> {
    check_ks(ks)?;
    if n == 0 {
        return Err(Error::invalid("recall needs n >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ranks = Vec::with_capacity(enc.len());
    for i in 0..enc.len() {
        let draws = pool.sample(&mut rng, n - 1, &[enc.keys[i].as_str()])?;
        let c = enc.contexts.row(i);
        let others = draws.iter().map(|&j| dot(c, pool_enc.row(j)));
        ranks.push(pessimistic_rank(enc.true_score(i), others));
    }
    Ok(recall_from_ranks(&ranks, ks, Some(n)))
}

/// Ranks of the true response among the whitelist plus the true response,
/// for the examples at `indices`.
fn whitelist_ranks(enc: &EncodedExamples<'_>, whitelist: &Whitelist, wl_enc: &Tensor<f32>, indices: &[usize]) -> Vec<usize> {
    indices
        .iter()
        .map(|&i| {
            let c = enc.contexts.row(i);
            match whitelist.position(&enc.keys[i]) {
                Some(w) => {
                    let s = dot(c, wl_enc.row(w));
                    let others = (0..whitelist.len()).filter(|&j| j != w).map(|j| dot(c, wl_enc.row(j)));
                    pessimistic_rank(s, others)
                }
                None => {
                    let others = (0..whitelist.len()).map(|j| dot(c, wl_enc.row(j)));
                    pessimistic_rank(enc.true_score(i), others)
                }
            }
        })
        .collect()
}

/// Candidates are the whitelist with the true response added when its key
/// is missing.
pub fn recall_whitelist_plus<E: Encoders + ?Sized>(
    model: &E,
    examples: &[TrainingExample],
    whitelist: &Whitelist,
    ks: &[usize],
) -> Result<RecallResult> {
    let enc = EncodedExamples::new(model, examples)?;
    let wl_enc = encode_texts(model, &whitelist.token_sequences())?;
    recall_whitelist_plus_encoded(&enc, whitelist, &wl_enc, ks)
}

pub fn recall_whitelist_plus_encoded(
    enc: &EncodedExamples<'_>,
    whitelist: &Whitelist,
    wl_enc: &Tensor<f32>,
    ks: &[usize],
) -> Result<RecallResult> {
    check_ks(ks)?;
    let all: Vec<usize> = (0..enc.len()).collect();
    Ok(recall_from_ranks(&whitelist_ranks(enc, whitelist, wl_enc, &all), ks, None))
}

/// Recall over only the examples whose true response is already in the
/// whitelist. Fails with [`Error::NoCoverage`] when there are none.
pub fn recall_whitelist_restricted<E: Encoders + ?Sized>(
    model: &E,
    examples: &[TrainingExample],
    whitelist: &Whitelist,
    ks: &[usize],
) -> Result<RecallResult> {
    let enc = EncodedExamples::new(model, examples)?;
    let wl_enc = encode_texts(model, &whitelist.token_sequences())?;
    recall_whitelist_restricted_encoded(&enc, whitelist, &wl_enc, ks)
}

pub fn recall_whitelist_restricted_encoded(
    enc: &EncodedExamples<'_>,
    whitelist: &Whitelist,
    wl_enc: &Tensor<f32>,
    ks: &[usize],
) -> Result<RecallResult> {
    check_ks(ks)?;
    let covered: Vec<usize> = (0..enc.len()).filter(|&i| whitelist.contains(&enc.keys[i])).collect();
    if covered.is_empty() {
        return Err(Error::NoCoverage(format!(
            "none of {} examples has its response in whitelist {}",
            enc.len(),
            whitelist.id()
        )));
    }
    Ok(recall_from_ranks(&whitelist_ranks(enc, whitelist, wl_enc, &covered), ks, None))
}

/// Fraction of examples whose normalized response is a whitelist key.
pub fn coverage(whitelist: &Whitelist, examples: &[TrainingExample]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::invalid("coverage needs at least one example"));
    }
    let hits = examples.iter().filter(|e| whitelist.contains(&e.response_key())).count();
    Ok(hits as f64 / examples.len() as f64)
}

/// Index of the best-scoring whitelist entry per example (ties to the lower
/// index).
pub fn top1_indices(enc: &EncodedExamples<'_>, wl_enc: &Tensor<f32>) -> Result<Vec<usize>> {
    let n = wl_enc.dims2().map(|(r, _)| r).unwrap_or(0);
    if n == 0 {
        return Err(Error::invalid("cannot pick suggestions from an empty whitelist"));
    }
    Ok((0..enc.len())
        .map(|i| {
            let c = enc.contexts.row(i);
            let mut best = (0, f32::NEG_INFINITY);
            for j in 0..n {
                let s = dot(c, wl_enc.row(j));
                if s > best.1 {
                    best = (j, s);
                }
            }
            best.0
        })
        .collect())
}
