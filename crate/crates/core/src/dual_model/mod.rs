//! Dual-encoder scoring model, its losses, negative sampling and training.

mod checkpoint;
mod loss;
mod sampler;
mod train;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embeddings::{EmbeddingConfig, SubwordEmbedding};
use crate::encoder::{EncoderConfig, EncoderLayout, SequenceBatch};
use crate::error::{Error, Result};
use crate::numerics::{dot, Element, Graph, ParamStore, Tensor, Var};

pub use checkpoint::{checkpoint_hash, load_checkpoint, save_checkpoint, Checkpoint, TrainerState, CHECKPOINT_VERSION};
pub use loss::{cross_entropy, hinge, pair_scores, HingeForm, LossConfig, LossKind};
pub use sampler::{NegativeSampler, NegativeSet};
pub use train::{validate, EpochMetrics, TrainReport, Trainer, TrainingConfig, ValidationResult};

/// Sequences encoded together at inference time.
const ENCODE_CHUNK: usize = 64;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub embedding: EmbeddingConfig,
    pub encoder: EncoderConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.embedding.validate()?;
        self.encoder.validate()?;
        if self.embedding.dim != self.encoder.input_dim {
            return Err(Error::invalid(format!(
                "embedding dim {} does not match encoder input_dim {}",
                self.embedding.dim, self.encoder.input_dim
            )));
        }
        Ok(())
    }
}

/// Context and response encoders with identical architecture and separate
/// weights, scored by dot product. Both live in one [`ParamStore`] under the
/// prefixes `ctx` and `rsp`.
pub struct DualEncoder<T: Element> {
    config: ModelConfig,
    store: ParamStore<T>,
    context: EncoderLayout,
    response: EncoderLayout,
    embedding: Arc<SubwordEmbedding>,
    response_encodings: AtomicU64,
}

impl<T: Element> Clone for DualEncoder<T> {
    fn clone(&self) -> Self {
        DualEncoder {
            config: self.config.clone(),
            store: self.store.clone(),
            context: self.context.clone(),
            response: self.response.clone(),
            embedding: Arc::clone(&self.embedding),
            response_encodings: AtomicU64::new(self.response_encoding_count()),
        }
    }
}

impl<T: Element> std::fmt::Debug for DualEncoder<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DualEncoder")
            .field("config", &self.config)
            .field("parameters", &self.store.num_scalars())
            .finish()
    }
}

/// Pooled encodings of one training batch inside a graph.
#[derive(Clone, Copy, Debug)]
pub struct BatchEncodings {
    pub contexts: Var,
    pub positives: Var,
    pub negatives: Var,
}

/// Shape and size summary of a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDescription {
    pub config: ModelConfig,
    pub parameters: Vec<ParameterShape>,
    pub total_parameters: usize,
    pub recurrent_parameters: usize,
    pub pooling_parameters: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterShape {
    pub name: String,
    pub shape: Vec<usize>,
}

impl<T: Element> DualEncoder<T> {
    /// Freshly initialized model; the same seed gives the same weights.
    pub fn new(config: ModelConfig, embedding: Arc<SubwordEmbedding>, seed: u64) -> Result<Self> {
        config.validate()?;
        check_embedding(&config, &embedding)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let context = EncoderLayout::init(&config.encoder, "ctx", &mut store, &mut rng)?;
        let response = EncoderLayout::init(&config.encoder, "rsp", &mut store, &mut rng)?;
        Ok(DualEncoder {
            config,
            store,
            context,
            response,
            embedding,
            response_encodings: AtomicU64::new(0),
        })
    }

    /// Wraps existing parameters, checking every expected name and shape.
    pub fn from_store(config: ModelConfig, store: ParamStore<T>, embedding: Arc<SubwordEmbedding>) -> Result<Self> {
        config.validate()?;
        check_embedding(&config, &embedding)?;
        let context = EncoderLayout::locate(&config.encoder, "ctx", &store)?;
        let response = EncoderLayout::locate(&config.encoder, "rsp", &store)?;
        let expected = context.param_ids().len() + response.param_ids().len();
        if expected != store.len() {
            return Err(Error::Format(format!(
                "parameter store holds {} tensors, model expects {expected}",
                store.len()
            )));
        }
        Ok(DualEncoder {
            config,
            store,
            context,
            response,
            embedding,
            response_encodings: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn embedding(&self) -> &Arc<SubwordEmbedding> {
        &self.embedding
    }

    pub fn context_encoder(&self) -> &EncoderLayout {
        &self.context
    }

    pub fn response_encoder(&self) -> &EncoderLayout {
        &self.response
    }

    pub fn output_dim(&self) -> usize {
        self.config.encoder.output_dim()
    }

    /// Same model at another precision.
    pub fn cast<U: Element>(&self) -> DualEncoder<U> {
        DualEncoder {
            config: self.config.clone(),
            store: self.store.cast(),
            context: self.context.clone(),
            response: self.response.clone(),
            embedding: Arc::clone(&self.embedding),
            response_encodings: AtomicU64::new(0),
        }
    }

    /// Number of sequences passed through the response encoder so far.
    pub fn response_encoding_count(&self) -> u64 {
        self.response_encodings.load(Ordering::Relaxed)
    }

    pub fn reset_response_encoding_count(&self) {
        self.response_encodings.store(0, Ordering::Relaxed);
    }

    /// Encodes contexts, one row per sequence.
    pub fn encode_contexts<S: AsRef<str>>(&self, seqs: &[&[S]]) -> Result<Tensor<T>> {
        encode_chunked(&self.context, &self.store, &self.embedding, seqs)
    }

    /// Encodes responses, one row per sequence.
    pub fn encode_responses<S: AsRef<str>>(&self, seqs: &[&[S]]) -> Result<Tensor<T>> {
        self.response_encodings.fetch_add(seqs.len() as u64, Ordering::Relaxed);
        encode_chunked(&self.response, &self.store, &self.embedding, seqs)
    }

    /// Records the encodings of one batch: `contexts.len()` contexts and the
    /// positives and shared negatives in a single response-encoder pass, so
    /// exactly `b + k` responses are encoded. `vars` come from binding this
    /// model's store into `g`.
    pub fn encode_batch<S: AsRef<str>>(
        &self,
        g: &mut Graph<T>,
        vars: &[Var],
        contexts: &[&[S]],
        positives: &[&[S]],
        negatives: &[&[S]],
    ) -> Result<BatchEncodings> {
        if contexts.len() != positives.len() {
            return Err(Error::invalid(format!(
                "{} contexts but {} positive responses",
                contexts.len(),
                positives.len()
            )));
        }
        let ctx_batch = SequenceBatch::embed(&self.embedding, contexts)?;
        let contexts_var = self.context.forward(g, vars, &ctx_batch)?.pooled;
        let responses: Vec<&[S]> = positives.iter().chain(negatives).copied().collect();
        let rsp_batch = SequenceBatch::embed(&self.embedding, &responses)?;
        self.response_encodings.fetch_add(responses.len() as u64, Ordering::Relaxed);
        let pooled = self.response.forward(g, vars, &rsp_batch)?.pooled;
        let b = positives.len();
        Ok(BatchEncodings {
            contexts: contexts_var,
            positives: g.slice(pooled, 0, 0, b)?,
            negatives: g.slice(pooled, 0, b, responses.len())?,
        })
    }

    /// Batch loss under `loss`, recorded into `g`.
    pub fn batch_loss<S: AsRef<str>>(
        &self,
        g: &mut Graph<T>,
        vars: &[Var],
        contexts: &[&[S]],
        positives: &[&[S]],
        negatives: &[&[S]],
        loss: &LossConfig,
    ) -> Result<Var> {
        let enc = self.encode_batch(g, vars, contexts, positives, negatives)?;
        loss.apply(g, enc.contexts, enc.positives, enc.negatives, None)
    }

    pub fn describe(&self) -> ModelDescription {
        let parameters = self
            .store
            .iter()
            .map(|(name, t)| ParameterShape {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect();
        let recurrent = self.context.recurrent_param_count(&self.store) + self.response.recurrent_param_count(&self.store);
        let total = self.store.num_scalars();
        ModelDescription {
            config: self.config.clone(),
            parameters,
            total_parameters: total,
            recurrent_parameters: recurrent,
            pooling_parameters: total - recurrent,
        }
    }
}

fn check_embedding(config: &ModelConfig, embedding: &SubwordEmbedding) -> Result<()> {
    if embedding.config() != &config.embedding {
        return Err(Error::invalid(
            "embedding table was built with a different configuration than the model",
        ));
    }
    Ok(())
}

fn encode_chunked<T: Element, S: AsRef<str>>(
    layout: &EncoderLayout,
    store: &ParamStore<T>,
    embedding: &SubwordEmbedding,
    seqs: &[&[S]],
) -> Result<Tensor<T>> {
    let d = layout.config().output_dim();
    // Grouping similar lengths keeps padding small.
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    order.sort_by_key(|&i| (seqs[i].len(), i));
    let mut out = vec![T::zero(); seqs.len() * d];
    for chunk in order.chunks(ENCODE_CHUNK) {
        let batch: Vec<&[S]> = chunk.iter().map(|&i| seqs[i]).collect();
        let enc = layout.encode(store, embedding, &batch)?;
        for (r, &i) in chunk.iter().enumerate() {
            out[i * d..(i + 1) * d].copy_from_slice(enc.row(r));
        }
    }
    Tensor::new(vec![seqs.len(), d], out)
}

/// Anything that maps contexts and responses into a shared space. Evaluation
/// and whitelist building only need this much of a model.
pub trait Encoders {
    fn output_dim(&self) -> usize;
    fn encode_contexts(&self, seqs: &[&[String]]) -> Result<Tensor<f32>>;
    fn encode_responses(&self, seqs: &[&[String]]) -> Result<Tensor<f32>>;
}

impl Encoders for DualEncoder<f32> {
    fn output_dim(&self) -> usize {
        DualEncoder::output_dim(self)
    }

    fn encode_contexts(&self, seqs: &[&[String]]) -> Result<Tensor<f32>> {
        DualEncoder::encode_contexts(self, seqs)
    }

    fn encode_responses(&self, seqs: &[&[String]]) -> Result<Tensor<f32>> {
        DualEncoder::encode_responses(self, seqs)
    }
}

/// Dot-product score of one context and one response encoding.
pub fn score<T: Element>(context: &[T], response: &[T]) -> Result<T> {
    if context.len() != response.len() {
        return Err(Error::Shape {
            op: "score",
            lhs: vec![context.len()],
            rhs: vec![response.len()],
        });
    }
    Ok(dot(context, response))
}

#[cfg(test)]
mod tests;
