use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DualEncoder, ModelConfig, TrainingConfig};
use crate::embeddings::SubwordEmbedding;
use crate::error::{Error, Result};
use crate::numerics::codec::{self, bytes_to_tensor, tensor_to_bytes, NamedTensors};
use crate::numerics::{AdamConfig, AdamState, ParamStore, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;

const META: &str = "meta.json";
const DIGEST: &str = "meta.sha256";

/// Optimizer progress saved next to the weights.
#[derive(Clone, Debug)]
pub struct TrainerState {
    pub adam: AdamState<f32>,
    pub step: u64,
    pub epoch: usize,
    pub training: TrainingConfig,
}

#[derive(Debug)]
pub struct Checkpoint {
    pub model: DualEncoder<f32>,
    pub state: Option<TrainerState>,
    /// Hex SHA-256 of the file bytes.
    pub hash: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    format_version: u32,
    model: ModelConfig,
    embedding_fingerprint: String,
    parameters: Vec<String>,
    trainer: Option<TrainerMeta>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainerMeta {
    step: u64,
    epoch: usize,
    training: TrainingConfig,
    adam: AdamConfig,
    adam_step: u64,
}

/// Hex SHA-256 of a file's bytes.
pub fn checkpoint_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Writes weights, config and optional optimizer state; returns the file hash.
/// The file is written next to `path` and renamed into place.
pub fn save_checkpoint(path: &Path, model: &DualEncoder<f32>, state: Option<&TrainerState>) -> Result<String> {
    let store = model.store();
    let names: Vec<String> = store.iter().map(|(n, _)| n.to_string()).collect();
    let meta = Meta {
        format_version: CHECKPOINT_VERSION,
        model: model.config().clone(),
        embedding_fingerprint: model.embedding().fingerprint(),
        parameters: names.clone(),
        trainer: state.map(|s| TrainerMeta {
            step: s.step,
            epoch: s.epoch,
            training: s.training.clone(),
            adam: s.adam.config,
            adam_step: s.adam.step,
        }),
    };
    let mut tensors: NamedTensors = vec![(META.to_string(), bytes_to_tensor(&serde_json::to_vec(&meta)?))];
    for (name, t) in store.iter() {
        tensors.push((name.to_string(), t.clone()));
    }
    if let Some(s) = state {
        for (moment, bufs) in [("m", &s.adam.first_moment), ("v", &s.adam.second_moment)] {
            for ((name, t), buf) in store.iter().zip(bufs.iter()) {
                tensors.push((format!("adam.{moment}.{name}"), Tensor::new(t.shape().to_vec(), buf.clone())?));
            }
        }
    }
    let digest = Sha256::digest(codec::encode(&tensors));
    tensors.push((DIGEST.to_string(), bytes_to_tensor(&digest)));
    let bytes = codec::encode(&tensors);
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &bytes).map_err(|e| Error::io(tmp.display().to_string(), e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Loads a checkpoint. Without `embedding`, the seeded table described by the
/// stored config is rebuilt; either way its fingerprint must match.
pub fn load_checkpoint(path: &Path, embedding: Option<Arc<SubwordEmbedding>>) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let hash = hex::encode(Sha256::digest(&bytes));
    let mut tensors = codec::decode(&bytes)?;
    match tensors.pop() {
        Some((name, digest)) if name == DIGEST => {
            let expected = Sha256::digest(codec::encode(&tensors));
            if tensor_to_bytes(&digest)? != expected.as_slice() {
                return Err(Error::Format(format!("{}: checksum mismatch", path.display())));
            }
        }
        _ => return Err(Error::Format(format!("{}: missing checksum", path.display()))),
    }
    let meta: Meta = serde_json::from_slice(&tensor_to_bytes(codec::find(&tensors, META)?)?)?;
    if meta.format_version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "{}: checkpoint format version {} (this build reads {CHECKPOINT_VERSION})",
            path.display(),
            meta.format_version
        )));
    }
    let embedding = match embedding {
        Some(e) => e,
        None => Arc::new(SubwordEmbedding::seeded(meta.model.embedding.clone())?),
    };
    if embedding.fingerprint() != meta.embedding_fingerprint {
        return Err(Error::invalid(format!(
            "{}: embedding table differs from the one used for training",
            path.display()
        )));
    }
    let mut store = ParamStore::new();
    for name in &meta.parameters {
        store.add(name.clone(), codec::find(&tensors, name)?.clone())?;
    }
    let state = match meta.trainer {
        Some(t) => {
            let mut adam = AdamState::new(&store, t.adam);
            adam.step = t.adam_step;
            for (i, name) in meta.parameters.iter().enumerate() {
                adam.first_moment[i] = codec::find(&tensors, &format!("adam.m.{name}"))?.data().to_vec();
                adam.second_moment[i] = codec::find(&tensors, &format!("adam.v.{name}"))?.data().to_vec();
                if adam.first_moment[i].len() != store.tensors()[i].len() || adam.second_moment[i].len() != store.tensors()[i].len() {
                    return Err(Error::Format(format!("optimizer state for {name} has the wrong size")));
                }
            }
            Some(TrainerState {
                adam,
                step: t.step,
                epoch: t.epoch,
                training: t.training,
            })
        }
        None => None,
    };
    let model = DualEncoder::from_store(meta.model, store, embedding)?;
    Ok(Checkpoint { model, state, hash })
}
