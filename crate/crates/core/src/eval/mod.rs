//! Offline metrics: pooled AUC and AUC@p, recall under random and whitelist
//! candidate sets, coverage and BLEU.

mod bleu;
mod recall;
mod report;
mod roc;

pub use bleu::{bleu, corpus_bleu, sentence_bleu_smoothed, BleuStats};
pub use recall::{
    coverage, pessimistic_rank, recall_random, recall_random_encoded, recall_whitelist_plus,
    recall_whitelist_plus_encoded, recall_whitelist_restricted, recall_whitelist_restricted_encoded, top1_indices,
    EncodedExamples, RecallResult,
};
pub use report::{
    eval_report, pooled_pairs, render_table, AucSection, EvalConfig, EvalReport, ReportInputs, WhitelistSection,
    REPORT_SCHEMA_VERSION,
};
pub use roc::{auc, auc_at_p, roc, RocCurve, RocPoint, ScoredPair};

#[cfg(test)]
mod tests;
