use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A score labelled as the true response (`true`) or a negative.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub score: f64,
    pub label: bool,
}

impl ScoredPair {
    pub fn new(score: f64, label: bool) -> Self {
        ScoredPair { score, label }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC points from `(0, 0)` to `(1, 1)`, one per distinct threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

fn class_counts(pairs: &[ScoredPair]) -> Result<(usize, usize)> {
    if let Some(p) = pairs.iter().find(|p| !p.score.is_finite()) {
        return Err(Error::NonFinite(format!("score {}", p.score)));
    }
    let pos = pairs.iter().filter(|p| p.label).count();
    let neg = pairs.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::invalid(format!(
            "AUC needs both classes, got {pos} positive and {neg} negative scores"
        )));
    }
    Ok((pos, neg))
}

/// Mann-Whitney AUC: the fraction of (positive, negative) pairs where the
/// positive scores higher, counting ties as one half.
pub fn auc(pairs: &[ScoredPair]) -> Result<f64> {
    let (pos, neg) = class_counts(pairs)?;
    let mut sorted: Vec<&ScoredPair> = pairs.iter().collect();
    sorted.sort_by(|a, b| a.score.total_cmp(&b.score));
    // Sum over positives of (negatives below) + 0.5 * (negatives tied).
    let mut wins = 0.0f64;
    let mut neg_below = 0usize;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        let (mut p, mut n) = (0usize, 0usize);
        while j < sorted.len() && sorted[j].score == sorted[i].score {
            if sorted[j].label {
                p += 1;
            } else {
                n += 1;
            }
            j += 1;
        }
        wins += p as f64 * neg_below as f64 + 0.5 * p as f64 * n as f64;
        neg_below += n;
        i = j;
    }
    Ok(wins / (pos as f64 * neg as f64))
}

pub fn roc(pairs: &[ScoredPair]) -> Result<RocCurve> {
    let (pos, neg) = class_counts(pairs)?;
    let mut sorted: Vec<&ScoredPair> = pairs.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let s = sorted[i].score;
        while i < sorted.len() && sorted[i].score == s {
            if sorted[i].label {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    Ok(RocCurve { points })
}

/// Area under the ROC up to false-positive rate `p`, divided by `p` so a
/// perfect ranking scores 1. The curve is interpolated linearly to reach
/// `p` exactly.
pub fn auc_at_p(pairs: &[ScoredPair], p: f64) -> Result<f64> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::invalid(format!("AUC@p needs 0 < p <= 1, got {p}")));
    }
    if p == 1.0 {
        return auc(pairs);
    }
    let curve = roc(pairs)?;
    let mut area = 0.0;
    for w in curve.points.windows(2) {
        let (a, b) = (w[0], w[1]);
        if a.fpr >= p {
            break;
        }
        if b.fpr <= p {
            area += (b.fpr - a.fpr) * (a.tpr + b.tpr) / 2.0;
        } else {
            let t = (p - a.fpr) / (b.fpr - a.fpr);
            let tpr = a.tpr + t * (b.tpr - a.tpr);
            area += (p - a.fpr) * (a.tpr + tpr) / 2.0;
        }
    }
    Ok(area / p)
}
