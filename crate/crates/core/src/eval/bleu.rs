use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::tokenize;
use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct BleuStats {
    pub bleu: f64,
    pub precisions: Vec<f64>,
    pub brevity_penalty: f64,
    pub hypothesis_length: usize,
    pub reference_length: usize,
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Clipped matches and hypothesis n-gram totals for orders 1..=4.
fn sentence_counts(reference: &[String], hypothesis: &[String]) -> ([usize; MAX_ORDER], [usize; MAX_ORDER]) {
    let mut matches = [0; MAX_ORDER];
    let mut totals = [0; MAX_ORDER];
    for n in 1..=MAX_ORDER {
        let r = ngram_counts(reference, n);
        let h = ngram_counts(hypothesis, n);
        matches[n - 1] = h.iter().map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0))).sum();
        totals[n - 1] = hypothesis.len().saturating_sub(n - 1);
    }
    (matches, totals)
}

fn brevity_penalty(hyp_len: usize, ref_len: usize) -> f64 {
    if hyp_len == 0 {
        0.0
    } else if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    }
}

/// Geometric mean of the precisions over the orders that have at least one
/// hypothesis n-gram, so corpora of very short sentences still score.
fn combine(matches: &[f64], totals: &[usize]) -> (f64, Vec<f64>) {
    let precisions: Vec<f64> = matches
        .iter()
        .zip(totals)
        .map(|(&m, &t)| if t > 0 { m / t as f64 } else { 0.0 })
        .collect();
    let used: Vec<f64> = precisions
        .iter()
        .zip(totals)
        .filter(|(_, &t)| t > 0)
        .map(|(&p, _)| p)
        .collect();
    if used.is_empty() || used.iter().any(|&p| p == 0.0) {
        return (0.0, precisions);
    }
    let log_mean = used.iter().map(|p| p.ln()).sum::<f64>() / used.len() as f64;
    (log_mean.exp(), precisions)
}

/// Corpus-level BLEU-4 over aligned token sequences, without smoothing.
pub fn corpus_bleu(references: &[Vec<String>], hypotheses: &[Vec<String>]) -> Result<BleuStats> {
    if hypotheses.is_empty() {
        return Err(Error::invalid("BLEU needs at least one hypothesis"));
    }
    if references.len() != hypotheses.len() {
        return Err(Error::invalid(format!(
            "{} references but {} hypotheses",
            references.len(),
            hypotheses.len()
        )));
    }
    let mut matches = [0usize; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    let (mut hyp_len, mut ref_len) = (0, 0);
    for (r, h) in references.iter().zip(hypotheses) {
        let (m, t) = sentence_counts(r, h);
        for n in 0..MAX_ORDER {
            matches[n] += m[n];
            totals[n] += t[n];
        }
        hyp_len += h.len();
        ref_len += r.len();
    }
    let m: Vec<f64> = matches.iter().map(|&v| v as f64).collect();
    let (mean, precisions) = combine(&m, &totals);
    let bp = brevity_penalty(hyp_len, ref_len);
    Ok(BleuStats {
        bleu: mean * bp,
        precisions,
        brevity_penalty: bp,
        hypothesis_length: hyp_len,
        reference_length: ref_len,
    })
}

/// [`corpus_bleu`] on raw strings, tokenized like the corpus.
pub fn bleu(references: &[&str], hypotheses: &[&str]) -> Result<f64> {
    let r: Vec<Vec<String>> = references.iter().map(|s| tokenize(s)).collect();
    let h: Vec<Vec<String>> = hypotheses.iter().map(|s| tokenize(s)).collect();
    Ok(corpus_bleu(&r, &h)?.bleu)
}

/// Sentence-level diagnostic BLEU with add-one smoothing on orders 2 and up.
pub fn sentence_bleu_smoothed(reference: &[String], hypothesis: &[String]) -> f64 {
    let (m, t) = sentence_counts(reference, hypothesis);
    if hypothesis.is_empty() || m[0] == 0 {
        return 0.0;
    }
    let mut log_sum = (m[0] as f64 / t[0] as f64).ln();
    for n in 1..MAX_ORDER {
        log_sum += ((m[n] as f64 + 1.0) / (t[n] as f64 + 1.0)).ln();
    }
    (log_sum / MAX_ORDER as f64).exp() * brevity_penalty(hypothesis.len(), reference.len())
}
