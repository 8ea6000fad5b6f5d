use std::collections::BTreeMap;
use std::fmt::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bleu::corpus_bleu;
use super::recall::{
    recall_random_encoded, recall_whitelist_plus_encoded, recall_whitelist_restricted_encoded, top1_indices,
    EncodedExamples, RecallResult,
};
use super::roc::{auc_at_p, ScoredPair};
use super::coverage;
use crate::corpus::{response_tokens, TrainingExample};
use crate::dual_model::{Encoders, NegativeSampler, NegativeSet};
use crate::error::{Error, Result};
use crate::numerics::dot;
use crate::whitelist::Whitelist;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Candidate-set sizes for the random protocol.
    pub recall_ns: Vec<usize>,
    pub ks: Vec<usize>,
    /// Shared negatives per example for the pooled AUC.
    pub auc_negatives: usize,
    pub auc_ps: Vec<f64>,
    pub seed: u64,
    /// Evaluate only the first this-many test examples.
    pub max_examples: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            recall_ns: vec![10, 100, 1000, 10_000],
            ks: vec![1, 3, 5, 10],
            auc_negatives: 200,
            auc_ps: vec![0.1, 0.05, 0.01],
            seed: 0,
            max_examples: None,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(Error::invalid("eval.ks must be a non-empty list of values >= 1"));
        }
        if self.recall_ns.contains(&0) {
            return Err(Error::invalid("eval.recall_ns values must be >= 1"));
        }
        if self.auc_negatives == 0 {
            return Err(Error::invalid("eval.auc_negatives must be >= 1"));
        }
        if let Some(p) = self.auc_ps.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
            return Err(Error::invalid(format!("eval.auc_ps value {p} is outside (0, 1]")));
        }
        Ok(())
    }
}

/// Identifiers tying a report to its inputs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct ReportInputs {
    pub corpus_hash: String,
    pub checkpoint_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct AucSection {
    pub auc: f64,
    /// Keyed by `p` formatted as a decimal.
    pub auc_at_p: BTreeMap<String, f64>,
    pub negatives: usize,
    pub positive_scores: usize,
    pub negative_scores: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct WhitelistSection {
    pub id: String,
    pub method: String,
    pub size: usize,
    pub hash: String,
    pub coverage: f64,
    pub plus: Option<RecallResult>,
    pub restricted: Option<RecallResult>,
    /// Corpus BLEU of the top-1 whitelist suggestion against the true response.
    pub bleu: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct EvalReport {
    pub schema_version: u32,
    pub inputs: ReportInputs,
    pub config: EvalConfig,
    pub examples: usize,
    pub auc: Option<AucSection>,
    pub recall_random: Vec<RecallResult>,
    pub whitelists: Vec<WhitelistSection>,
    /// Metrics that could not be computed, with the reason.
    pub failures: Vec<String>,
}

/// Pooled true-vs-negative scores: each example's true response and a fixed
/// seeded negative set, leaving out negatives that share the example's key.
pub fn pooled_pairs(enc: &EncodedExamples<'_>, negatives: &NegativeSet, neg_enc: &crate::numerics::Tensor<f32>) -> Vec<ScoredPair> {
    let mut pairs = Vec::with_capacity(enc.len() * (negatives.len() + 1));
    for i in 0..enc.len() {
        let c = enc.contexts.row(i);
        pairs.push(ScoredPair::new(f64::from(dot(c, enc.responses.row(i))), true));
        for (j, key) in negatives.keys.iter().enumerate() {
            if *key != enc.keys[i] {
                pairs.push(ScoredPair::new(f64::from(dot(c, neg_enc.row(j))), false));
            }
        }
    }
    pairs
}

fn encode_seqs<E: Encoders + ?Sized>(model: &E, seqs: &[Vec<String>]) -> Result<crate::numerics::Tensor<f32>> {
    let refs: Vec<&[String]> = seqs.iter().map(Vec::as_slice).collect();
    model.encode_responses(&refs)
}

/// Computes every metric it can. Failures of individual metrics are listed
/// in the report rather than aborting it.
pub fn eval_report<E: Encoders + ?Sized>(
    model: &E,
    test: &[TrainingExample],
    pool: &NegativeSampler,
    whitelists: &[Whitelist],
    config: &EvalConfig,
    inputs: ReportInputs,
) -> Result<EvalReport> {
    config.validate()?;
    let test = &test[..config.max_examples.map_or(test.len(), |m| m.min(test.len()))];
    let enc = EncodedExamples::new(model, test)?;
    let mut failures = Vec::new();

    let auc = {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let k = config.auc_negatives.min(pool.len());
        let negatives = NegativeSet::draw(pool, k, &mut rng)?;
        let neg_enc = encode_seqs(model, &negatives.tokens)?;
        let pairs = pooled_pairs(&enc, &negatives, &neg_enc);
        match super::auc(&pairs) {
            Ok(value) => {
                let mut at_p = BTreeMap::new();
                for &p in &config.auc_ps {
                    at_p.insert(format!("{p}"), auc_at_p(&pairs, p)?);
                }
                let positives = pairs.iter().filter(|p| p.label).count();
                Some(AucSection {
                    auc: value,
                    auc_at_p: at_p,
                    negatives: k,
                    positive_scores: positives,
                    negative_scores: pairs.len() - positives,
                })
            }
            Err(e) => {
                failures.push(format!("auc: {e}"));
                None
            }
        }
    };

    let pool_tokens: Vec<Vec<String>> = (0..pool.len()).map(|i| pool.tokens(i).to_vec()).collect();
    let pool_enc = encode_seqs(model, &pool_tokens)?;
    let mut recall_random = Vec::new();
    for (i, &n) in config.recall_ns.iter().enumerate() {
        let seed = config.seed.wrapping_add(1 + i as u64);
        match recall_random_encoded(&enc, pool, &pool_enc, n, &config.ks, seed) {
            Ok(r) => recall_random.push(r),
            Err(e) => failures.push(format!("recall_random n={n}: {e}")),
        }
    }

    let mut sections = Vec::new();
    for wl in whitelists {
        let id = wl.id();
        let cov = coverage(wl, test)?;
        let (plus, restricted, bleu) = if wl.is_empty() {
            failures.push(format!("{id}: whitelist is empty"));
            (None, None, None)
        } else {
            let wl_enc = encode_seqs(model, &wl.token_sequences())?;
            let plus = recall_whitelist_plus_encoded(&enc, wl, &wl_enc, &config.ks)?;
            let restricted = match recall_whitelist_restricted_encoded(&enc, wl, &wl_enc, &config.ks) {
                Ok(r) => Some(r),
                Err(e) => {
                    failures.push(format!("{id} restricted recall: {e}"));
                    None
                }
            };
            let top = top1_indices(&enc, &wl_enc)?;
            let hyps: Vec<Vec<String>> = top.iter().map(|&j| response_tokens(&wl.entries()[j].text)).collect();
            let refs: Vec<Vec<String>> = test.iter().map(|e| e.response_tokens.clone()).collect();
            (Some(plus), restricted, Some(corpus_bleu(&refs, &hyps)?.bleu))
        };
        sections.push(WhitelistSection {
            id,
            method: wl.method().as_str().to_string(),
            size: wl.len(),
            hash: wl.hash(),
            coverage: cov,
            plus,
            restricted,
            bleu,
        });
    }

    Ok(EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        inputs,
        config: config.clone(),
        examples: test.len(),
        auc,
        recall_random,
        whitelists: sections,
        failures,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

/// Column-aligned plain-text rendering of a report.
pub fn render_table(report: &EvalReport) -> String {
    let mut out = String::new();
    let ks = &report.config.ks;
    let _ = writeln!(out, "examples: {}", report.examples);
    if let Some(a) = &report.auc {
        let _ = writeln!(out, "\n{:<12} {:>8}", "metric", "value");
        let _ = writeln!(out, "{:<12} {:>8.4}", "AUC", a.auc);
        for (p, v) in &a.auc_at_p {
            let _ = writeln!(out, "{:<12} {:>8.4}", format!("AUC@{p}"), v);
        }
        let _ = writeln!(out, "({} shared negatives per example)", a.negatives);
    }
    let header: String = ks.iter().map(|k| format!(" {:>8}", format!("R@{k}"))).collect();
    if !report.recall_random.is_empty() {
        let _ = writeln!(out, "\n{:<12}{header}", "candidates");
        for r in &report.recall_random {
            let cells: String = r.recall.iter().map(|v| format!(" {v:>8.4}")).collect();
            let _ = writeln!(out, "{:<12}{cells}", r.n.unwrap_or(0));
        }
    }
    if !report.whitelists.is_empty() {
        let _ = writeln!(out, "\n{:<22}{header} {:>8} {:>8} {:>8}", "whitelist", "BLEU", "R@1*", "coverage");
        for w in &report.whitelists {
            let cells: String = match &w.plus {
                Some(r) => r.recall.iter().map(|v| format!(" {v:>8.4}")).collect(),
                None => ks.iter().map(|_| format!(" {:>8}", "-")).collect(),
            };
            let r1 = w.restricted.as_ref().and_then(|r| r.at(1));
            let _ = writeln!(
                out,
                "{:<22}{cells} {:>8} {:>8} {:>8.4}",
                format!("{}+", w.id),
                fmt_opt(w.bleu),
                fmt_opt(r1),
                w.coverage
            );
        }
        let _ = writeln!(out, "(R@1* counts only examples whose response is in the whitelist)");
    }
    for f in &report.failures {
        let _ = writeln!(out, "FAILED: {f}");
    }
    out
}
