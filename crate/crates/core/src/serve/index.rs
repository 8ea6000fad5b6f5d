use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dual_model::Encoders;
use crate::error::{Error, Result};
use crate::numerics::codec::{self, bytes_to_tensor, tensor_to_bytes};
use crate::numerics::{dot, Tensor};
use crate::whitelist::Whitelist;

const META: &str = "index.meta";
const MATRIX: &str = "index.matrix";

/// Encodings of every whitelist entry, row `i` for entry `i`, tied to the
/// checkpoint and whitelist they were computed from.
#[derive(Clone, Debug, PartialEq)]
pub struct ResponseIndex {
    matrix: Tensor<f32>,
    whitelist_hash: String,
    checkpoint_hash: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IndexMeta {
    checkpoint_hash: String,
    whitelist_hash: String,
    rows: usize,
    dim: usize,
}

/// One ranked candidate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ranked {
    pub index: usize,
    pub score: f32,
}

impl ResponseIndex {
    /// Encodes the canonical text of every entry with the response encoder.
    pub fn build<E: Encoders + ?Sized>(whitelist: &Whitelist, model: &E, checkpoint_hash: &str) -> Result<Self> {
        let seqs = whitelist.token_sequences();
        let dim = model.output_dim();
        let mut data = Vec::with_capacity(seqs.len() * dim);
        for (c, chunk) in seqs.chunks(256).enumerate() {
            let refs: Vec<&[String]> = chunk.iter().map(Vec::as_slice).collect();
            let encoded = match model.encode_responses(&refs) {
                Ok(t) => t,
                Err(e) => {
                    let bad = (0..refs.len())
                        .find(|&i| model.encode_responses(&refs[i..=i]).is_err())
                        .unwrap_or(0);
                    let entry = &whitelist.entries()[c * 256 + bad];
                    return Err(Error::invalid(format!("encoding whitelist entry {:?}: {e}", entry.key)));
                }
            };
            for (i, row) in encoded.data().chunks_exact(dim).enumerate() {
                if !row.iter().all(|v| v.is_finite()) {
                    let entry = &whitelist.entries()[c * 256 + i];
                    return Err(Error::NonFinite(format!("encoding of whitelist entry {:?}", entry.key)));
                }
            }
            data.extend_from_slice(encoded.data());
        }
        Ok(ResponseIndex {
            matrix: Tensor::new(vec![seqs.len(), dim], data)?,
            whitelist_hash: whitelist.hash(),
            checkpoint_hash: checkpoint_hash.to_string(),
        })
    }

    /// Wraps a precomputed matrix; rows must be finite.
    pub fn from_matrix(matrix: Tensor<f32>, whitelist_hash: &str, checkpoint_hash: &str) -> Result<Self> {
        if matrix.rank() != 2 {
            return Err(Error::invalid(format!("index matrix must be rank 2, got {:?}", matrix.shape())));
        }
        if !matrix.all_finite() {
            return Err(Error::NonFinite("response index matrix".into()));
        }
        Ok(ResponseIndex {
            matrix,
            whitelist_hash: whitelist_hash.to_string(),
            checkpoint_hash: checkpoint_hash.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.matrix.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.matrix.shape()[1]
    }

    pub fn matrix(&self) -> &Tensor<f32> {
        &self.matrix
    }

    pub fn row(&self, i: usize) -> &[f32] {
        self.matrix.row(i)
    }

    pub fn checkpoint_hash(&self) -> &str {
        &self.checkpoint_hash
    }

    pub fn whitelist_hash(&self) -> &str {
        &self.whitelist_hash
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = IndexMeta {
            checkpoint_hash: self.checkpoint_hash.clone(),
            whitelist_hash: self.whitelist_hash.clone(),
            rows: self.len(),
            dim: self.dim(),
        };
        let tensors = vec![
            (META.to_string(), bytes_to_tensor(&serde_json::to_vec(&meta)?)),
            (MATRIX.to_string(), self.matrix.clone()),
        ];
        codec::write_file(path, &tensors)
    }

    /// Loads an index, refusing one computed from a different checkpoint or
    /// whitelist.
    pub fn load(path: &Path, whitelist: &Whitelist, checkpoint_hash: &str) -> Result<Self> {
        let tensors = codec::read_file(path)?;
        let meta: IndexMeta = serde_json::from_slice(&tensor_to_bytes(codec::find(&tensors, META)?)?)?;
        if meta.checkpoint_hash != checkpoint_hash {
            return Err(Error::Format(format!(
                "{}: stale index built for checkpoint {}, expected {checkpoint_hash}",
                path.display(),
                meta.checkpoint_hash
            )));
        }
        let wl_hash = whitelist.hash();
        if meta.whitelist_hash != wl_hash {
            return Err(Error::Format(format!(
                "{}: stale index built for whitelist {}, expected {wl_hash}",
                path.display(),
                meta.whitelist_hash
            )));
        }
        let matrix = codec::find(&tensors, MATRIX)?.clone();
        if matrix.shape() != [meta.rows, meta.dim] || meta.rows != whitelist.len() {
            return Err(Error::Format(format!(
                "{}: index shape {:?} does not match {} whitelist entries",
                path.display(),
                matrix.shape(),
                whitelist.len()
            )));
        }
        Self::from_matrix(matrix, &meta.whitelist_hash, &meta.checkpoint_hash)
    }
}

/// Higher score first, then lower index.
fn rank_order(a: &Ranked, b: &Ranked) -> Ordering {
    b.score.total_cmp(&a.score).then(a.index.cmp(&b.index))
}

/// Exact top `k` rows of `index` by dot product with `context`.
pub fn top_k(context: &[f32], index: &ResponseIndex, k: usize) -> Result<Vec<Ranked>> {
    if index.is_empty() {
        return Err(Error::invalid("top_k over an empty index"));
    }
    if k == 0 {
        return Err(Error::invalid("top_k needs k >= 1"));
    }
    if context.len() != index.dim() {
        return Err(Error::Shape {
            op: "top_k",
            lhs: vec![context.len()],
            rhs: index.matrix.shape().to_vec(),
        });
    }
    if !context.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("context encoding".into()));
    }
    let mut scored: Vec<Ranked> = index
        .matrix
        .data()
        .chunks_exact(index.dim())
        .enumerate()
        .map(|(i, row)| Ranked {
            index: i,
            score: dot(context, row),
        })
        .collect();
    let k = k.min(scored.len());
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, rank_order);
        scored.truncate(k);
    }
    scored.sort_unstable_by(rank_order);
    Ok(scored)
}
