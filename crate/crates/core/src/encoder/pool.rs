use crate::error::{Error, Result};
use crate::numerics::{dot, BackwardFn, Element, Graph, Tensor, Var};

use super::Activation;

/// Graph variables of one attention head.
#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    /// `d_enc x d_a`.
    pub w_a: Var,
    /// `d_a`.
    pub v_a: Var,
}

/// Pooled encodings plus the attention weights that produced them.
#[derive(Clone, Copy, Debug)]
pub struct PoolOutput {
    /// `batch x d_enc`.
    pub pooled: Var,
    /// `batch * steps x heads`, zero at masked positions.
    pub weights: Var,
}

/// Weighted sum of rows within each segment of `steps` rows:
/// `out[b] = sum_t w[b*steps + t] * h[b*steps + t]`.
fn segment_weighted_sum<T: Element>(g: &mut Graph<T>, w: Var, h: Var, batch: usize, steps: usize) -> Result<Var> {
    let rows = batch * steps;
    let d = match g.shape(h) {
        [r, d] if *r == rows => *d,
        s => {
            return Err(Error::Shape {
                op: "segment_weighted_sum",
                lhs: s.to_vec(),
                rhs: vec![rows, 0],
            })
        }
    };
    if g.shape(w) != [rows] {
        return Err(Error::Shape {
            op: "segment_weighted_sum",
            lhs: g.shape(w).to_vec(),
            rhs: vec![rows],
        });
    }
    let wv = g.value(w).data();
    let hv = g.value(h).data();
    let mut out = vec![T::zero(); batch * d];
    for b in 0..batch {
        let o = &mut out[b * d..(b + 1) * d];
        for t in 0..steps {
            let r = b * steps + t;
            let wt = wv[r];
            if wt == T::zero() {
                continue;
            }
            for (acc, &x) in o.iter_mut().zip(&hv[r * d..(r + 1) * d]) {
                *acc = *acc + wt * x;
            }
        }
    }
    let value = Tensor::new(vec![batch, d], out)?;
    let backward: BackwardFn<T> = Box::new(move |inputs, _out, up| {
        let (wv, hv, gv) = (inputs[0].data(), inputs[1].data(), up.data());
        let mut gw = vec![T::zero(); rows];
        let mut gh = vec![T::zero(); rows * d];
        for b in 0..batch {
            let gb = &gv[b * d..(b + 1) * d];
            for t in 0..steps {
                let r = b * steps + t;
                gw[r] = dot(gb, &hv[r * d..(r + 1) * d]);
                let wt = wv[r];
                for (o, &x) in gh[r * d..(r + 1) * d].iter_mut().zip(gb) {
                    *o = wt * x;
                }
            }
        }
        vec![
            Some(Tensor::new(vec![rows], gw).expect("shape")),
            Some(Tensor::new(vec![rows, d], gh).expect("shape")),
        ]
    });
    Ok(g.custom(&[w, h], value, backward))
}

/// Multi-head attention pooling over a padded batch.
///
/// For head `i`: scores `act(H W_a) v_a`, a softmax over the unmasked steps of
/// each sequence, and the weighted sum of rows of `H`. Heads are averaged.
/// `mask[b * steps + t]` is true for real (unpadded) positions.
pub fn attention_pool<T: Element>(
    g: &mut Graph<T>,
    h: Var,
    mask: &[bool],
    batch: usize,
    steps: usize,
    heads: &[HeadVars],
    activation: Activation,
) -> Result<PoolOutput> {
    let rows = batch * steps;
    if heads.is_empty() {
        return Err(Error::invalid("attention pooling needs at least one head"));
    }
    if mask.len() != rows || g.shape(h).first() != Some(&rows) {
        return Err(Error::Shape {
            op: "attention_pool",
            lhs: g.shape(h).to_vec(),
            rhs: vec![mask.len()],
        });
    }
    for b in 0..batch {
        if !mask[b * steps..(b + 1) * steps].iter().any(|&m| m) {
            return Err(Error::invalid(format!("attention pooling: sequence {b} is fully masked")));
        }
    }
    let d_a = g.shape(heads[0].v_a)[0];
    let w_parts: Vec<Var> = heads.iter().map(|hd| hd.w_a).collect();
    let w_cat = if w_parts.len() == 1 { w_parts[0] } else { g.concat(&w_parts, 1)? };
    let pre = g.matmul(h, w_cat)?;
    let z = match activation {
        Activation::Tanh => g.tanh(pre),
        Activation::Sigmoid => g.sigmoid(pre),
    };
    let mut per_head = Vec::with_capacity(heads.len());
    for (i, hd) in heads.iter().enumerate() {
        let zi = if heads.len() == 1 { z } else { g.slice(z, 1, i * d_a, (i + 1) * d_a)? };
        let v = g.reshape(hd.v_a, &[d_a, 1])?;
        per_head.push(g.matmul(zi, v)?);
    }
    let mut scores = if per_head.len() == 1 { per_head[0] } else { g.concat(&per_head, 1)? };
    if mask.iter().any(|&m| !m) {
        let n_h = heads.len();
        let mut bias = vec![T::zero(); rows * n_h];
        for (r, &m) in mask.iter().enumerate() {
            if !m {
                bias[r * n_h..(r + 1) * n_h].iter_mut().for_each(|v| *v = T::neg_infinity());
            }
        }
        let bias = g.constant(Tensor::new(vec![rows, n_h], bias)?);
        scores = g.add(scores, bias)?;
    }
    let cube = g.reshape(scores, &[batch, steps, heads.len()])?;
    let alpha = g.softmax(cube, 1)?;
    let weights = g.reshape(alpha, &[rows, heads.len()])?;
    // Averaging the pooled heads equals pooling once with head-averaged weights.
    let mean_w = g.mean(weights, Some(1))?;
    let pooled = segment_weighted_sum(g, mean_w, h, batch, steps)?;
    Ok(PoolOutput { pooled, weights })
}
