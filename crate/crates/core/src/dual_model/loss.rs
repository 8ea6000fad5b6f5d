use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Element, Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    CrossEntropy,
    Hinge,
}

/// `Rectified` is `max(0, m - s+ + s-)`. `Absolute` is `|s+ - s- + m|`,
/// which also penalizes margins that are already satisfied.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum HingeForm {
    #[default]
    Rectified,
    Absolute,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub kind: LossKind,
    pub margin: f64,
    pub hinge_form: HingeForm,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            kind: LossKind::CrossEntropy,
            margin: 0.25,
            hinge_form: HingeForm::Rectified,
        }
    }
}

impl LossConfig {
    /// Batch-mean loss from context, positive and shared negative encodings.
    /// `mask`, when given, is added to the `b x k` negative scores; `-inf`
    /// entries drop that negative for that example.
    pub fn apply<T: Element>(
        &self,
        g: &mut Graph<T>,
        contexts: Var,
        positives: Var,
        negatives: Var,
        mask: Option<&Tensor<T>>,
    ) -> Result<Var> {
        match self.kind {
            LossKind::CrossEntropy => cross_entropy(g, contexts, positives, negatives, mask),
            LossKind::Hinge => {
                if mask.is_some() {
                    return Err(Error::invalid("hinge loss does not take a negative mask"));
                }
                hinge(g, contexts, positives, negatives, T::from_f64(self.margin), self.hinge_form)
            }
        }
    }
}

/// Positive scores `(b)` and negative scores `(b x k)`.
pub fn pair_scores<T: Element>(g: &mut Graph<T>, contexts: Var, positives: Var, negatives: Var) -> Result<(Var, Var)> {
    let prod = g.mul(contexts, positives)?;
    let pos = g.sum(prod, Some(1))?;
    let neg = g.matmul_t(contexts, negatives, false, true)?;
    Ok((pos, neg))
}

/// Mean over the batch of `lse(s+, s1-, .., sk-) - s+`.
pub fn cross_entropy<T: Element>(
    g: &mut Graph<T>,
    contexts: Var,
    positives: Var,
    negatives: Var,
    mask: Option<&Tensor<T>>,
) -> Result<Var> {
    let (pos, mut neg) = pair_scores(g, contexts, positives, negatives)?;
    if let Some(mask) = mask {
        if mask.shape() != g.shape(neg) {
            return Err(Error::Shape {
                op: "negative mask",
                lhs: g.shape(neg).to_vec(),
                rhs: mask.shape().to_vec(),
            });
        }
        let m = g.constant(mask.clone());
        neg = g.add(neg, m)?;
    }
    let b = g.shape(pos)[0];
    let pos_col = g.reshape(pos, &[b, 1])?;
    let logits = g.concat(&[pos_col, neg], 1)?;
    let lse = g.log_sum_exp(logits, 1)?;
    let neg_pos = g.scale(pos, -T::one());
    let per_example = g.add(lse, neg_pos)?;
    g.mean(per_example, None)
}

/// Mean over the batch of the summed per-negative hinge terms.
pub fn hinge<T: Element>(
    g: &mut Graph<T>,
    contexts: Var,
    positives: Var,
    negatives: Var,
    margin: T,
    form: HingeForm,
) -> Result<Var> {
    let (pos, neg) = pair_scores(g, contexts, positives, negatives)?;
    let (b, k) = (g.shape(neg)[0], g.shape(neg)[1]);
    // Spread s+ across the k columns with a product against ones.
    let pos_col = g.reshape(pos, &[b, 1])?;
    let ones = g.constant(Tensor::filled(&[1, k], T::one()));
    let pos_wide = g.matmul(pos_col, ones)?;
    let neg_pos = g.scale(pos_wide, -T::one());
    let diff = g.add(neg, neg_pos)?;
    let shift = g.constant(Tensor::filled(&[b, k], margin));
    let raw = g.add(diff, shift)?;
    let terms = match form {
        HingeForm::Rectified => relu(g, raw),
        HingeForm::Absolute => abs(g, raw),
    };
    let per_example = g.sum(terms, Some(1))?;
    g.mean(per_example, None)
}

fn relu<T: Element>(g: &mut Graph<T>, x: Var) -> Var {
    let value = g.value(x).map(|v| v.max(T::zero()));
    g.custom(
        &[x],
        value,
        Box::new(|inputs, _out, upstream| {
            let data = inputs[0]
                .data()
                .iter()
                .zip(upstream.data())
                .map(|(&x, &u)| if x > T::zero() { u } else { T::zero() })
                .collect();
            vec![Some(Tensor::new(upstream.shape().to_vec(), data).expect("same shape"))]
        }),
    )
}

fn abs<T: Element>(g: &mut Graph<T>, x: Var) -> Var {
    let value = g.value(x).map(|v| v.abs());
    g.custom(
        &[x],
        value,
        Box::new(|inputs, _out, upstream| {
            let data = inputs[0]
                .data()
                .iter()
                .zip(upstream.data())
                .map(|(&x, &u)| {
                    if x > T::zero() {
                        u
                    } else if x < T::zero() {
                        -u
                    } else {
                        T::zero()
                    }
                })
                .collect();
            vec![Some(Tensor::new(upstream.shape().to_vec(), data).expect("same shape"))]
        }),
    )
}
