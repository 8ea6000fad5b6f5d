//! Sequence encoders: stacked bidirectional SRU or LSTM layers followed by
//! multi-head attention pooling.

mod layers;
mod pool;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embeddings::SubwordEmbedding;
use crate::error::{Error, Result};
use crate::numerics::{Element, Graph, LstmInputs, ParamId, ParamStore, SruInputs, Tensor, Var};

pub use layers::{lstm_layer_forward, sru_layer_forward, LstmLayerParams, SruLayerParams};
pub use pool::{attention_pool, HeadVars, PoolOutput};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Sru,
    Lstm,
}

/// Nonlinearity applied to `H W_a` before the attention scores.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sigmoid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub cell: CellKind,
    pub layers: usize,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub bidirectional: bool,
    pub heads: usize,
    pub attention_dim: usize,
    pub activation: Activation,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            cell: CellKind::Sru,
            layers: 4,
            input_dim: 300,
            hidden_dim: 300,
            bidirectional: true,
            heads: 16,
            attention_dim: 64,
            activation: Activation::Tanh,
        }
    }
}

impl EncoderConfig {
    pub fn directions(&self) -> usize {
        if self.bidirectional {
            2
        } else {
            1
        }
    }

    /// Width of the pooled encoding.
    pub fn output_dim(&self) -> usize {
        self.directions() * self.hidden_dim
    }

    fn layer_input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            self.output_dim()
        }
    }

    /// The highway term of an SRU direction reads its own `hidden_dim` slice
    /// of the layer input when the input is exactly `directions * hidden_dim`
    /// wide; otherwise it goes through a learned projection.
    pub fn sru_needs_projection(&self, layer: usize) -> bool {
        self.layer_input_dim(layer) != self.output_dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.input_dim == 0 || self.hidden_dim == 0 || self.heads == 0 || self.attention_dim == 0 {
            return Err(Error::invalid(format!("invalid encoder config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
enum DirectionParams {
    Sru {
        w: ParamId,
        w_f: ParamId,
        w_r: ParamId,
        proj: Option<ParamId>,
        v_f: ParamId,
        v_r: ParamId,
        b_f: ParamId,
        b_r: ParamId,
    },
    Lstm {
        w_ih: ParamId,
        w_hh: ParamId,
        bias: ParamId,
    },
}

/// Where one encoder's parameters live inside a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct EncoderLayout {
    config: EncoderConfig,
    prefix: String,
    layers: Vec<Vec<DirectionParams>>,
    heads: Vec<(ParamId, ParamId)>,
}

const DIRECTION_NAMES: [&str; 2] = ["fwd", "bwd"];

fn uniform<T: Element, R: Rng>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64(rng.random_range(-bound..=bound))).collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

/// Padded batch of embedded sequences, laid out so that row
/// `b * steps + t` is step `t` of sequence `b`.
#[derive(Clone, Debug)]
pub struct SequenceBatch<T: Element> {
    pub embeddings: Tensor<T>,
    pub lengths: Vec<usize>,
    pub steps: usize,
}

impl<T: Element> SequenceBatch<T> {
    /// Embeds and pads `seqs`; every sequence must be non-empty.
    pub fn embed<S: AsRef<str>>(embedding: &SubwordEmbedding, seqs: &[&[S]]) -> Result<Self> {
        if let Some(i) = seqs.iter().position(|s| s.is_empty()) {
            return Err(Error::invalid(format!("cannot encode empty sequence (batch position {i})")));
        }
        let steps = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        let d = embedding.dim();
        let mut data = vec![0.0f32; seqs.len() * steps * d];
        for (b, s) in seqs.iter().enumerate() {
            let start = b * steps * d;
            embedding.embed_into(s, &mut data[start..start + s.len() * d]);
        }
        let data = data.into_iter().map(|v| T::from_f64(f64::from(v))).collect();
        Ok(SequenceBatch {
            embeddings: Tensor::new(vec![seqs.len() * steps, d], data)?,
            lengths: seqs.iter().map(|s| s.len()).collect(),
            steps,
        })
    }

    pub fn batch(&self) -> usize {
        self.lengths.len()
    }

    pub fn mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.batch() * self.steps];
        for (b, &len) in self.lengths.iter().enumerate() {
            m[b * self.steps..b * self.steps + len].iter_mut().for_each(|v| *v = true);
        }
        m
    }

    /// Row permutation reversing each sequence within its own length;
    /// padding rows stay in place. It is its own inverse.
    fn reversal(&self) -> Vec<usize> {
        let mut p: Vec<usize> = (0..self.batch() * self.steps).collect();
        for (b, &len) in self.lengths.iter().enumerate() {
            for t in 0..len {
                p[b * self.steps + t] = b * self.steps + len - 1 - t;
            }
        }
        p
    }
}

/// Per-step hidden states, attention weights and pooled encodings.
#[derive(Clone, Copy, Debug)]
pub struct EncoderOutput {
    pub hidden: Var,
    pub weights: Var,
    pub pooled: Var,
}

impl EncoderLayout {
    /// Adds freshly initialized parameters named `{prefix}.layer{l}.{fwd|bwd}.*`
    /// and `{prefix}.pool.head{i}.*` to `store`.
    pub fn init<T: Element, R: Rng>(
        config: &EncoderConfig,
        prefix: &str,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        Self::build(config, prefix, |name, shape, bound| {
            let t = match bound {
                Some(b) => uniform(rng, shape, b),
                None => Tensor::zeros(shape),
            };
            store.add(name, t)
        })
    }

    /// Locates existing parameters by name, checking every shape.
    pub fn locate<T: Element>(config: &EncoderConfig, prefix: &str, store: &ParamStore<T>) -> Result<Self> {
        config.validate()?;
        Self::build(config, prefix, |name, shape, _| {
            let id = store
                .id(&name)
                .ok_or_else(|| Error::Format(format!("missing parameter {name}")))?;
            if store.get(id).shape() != shape {
                return Err(Error::Shape {
                    op: "parameter",
                    lhs: store.get(id).shape().to_vec(),
                    rhs: shape.to_vec(),
                });
            }
            Ok(id)
        })
    }

    /// `param(name, shape, init_bound)`; a bound of `None` means zeros.
    fn build(
        config: &EncoderConfig,
        prefix: &str,
        mut param: impl FnMut(String, &[usize], Option<f64>) -> Result<ParamId>,
    ) -> Result<Self> {
        let dh = config.hidden_dim;
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let din = config.layer_input_dim(l);
            let fan_in = (1.0 / din as f64).sqrt();
            let mut dirs = Vec::new();
            for dir in &DIRECTION_NAMES[..config.directions()] {
                let n = |s: &str| format!("{prefix}.layer{l}.{dir}.{s}");
                let p = match config.cell {
                    CellKind::Sru => {
                        let w = param(n("W"), &[dh, din], Some(fan_in))?;
                        let w_f = param(n("W_f"), &[dh, din], Some(fan_in))?;
                        let w_r = param(n("W_r"), &[dh, din], Some(fan_in))?;
                        let proj = if config.sru_needs_projection(l) {
                            Some(param(n("P"), &[dh, din], Some(fan_in))?)
                        } else {
                            None
                        };
                        let v_bound = Some((1.0 / dh as f64).sqrt());
                        DirectionParams::Sru {
                            w,
                            w_f,
                            w_r,
                            proj,
                            v_f: param(n("v_f"), &[dh], v_bound)?,
                            v_r: param(n("v_r"), &[dh], v_bound)?,
                            b_f: param(n("b_f"), &[dh], None)?,
                            // The reset-gate bias; some write-ups label it b_v.
                            b_r: param(n("b_r"), &[dh], None)?,
                        }
                    }
                    CellKind::Lstm => DirectionParams::Lstm {
                        w_ih: param(n("W_ih"), &[4 * dh, din], Some(fan_in))?,
                        w_hh: param(n("W_hh"), &[4 * dh, dh], Some((1.0 / dh as f64).sqrt()))?,
                        bias: param(n("b"), &[4 * dh], None)?,
                    },
                };
                dirs.push(p);
            }
            layers.push(dirs);
        }
        let d_enc = config.output_dim();
        let mut heads = Vec::with_capacity(config.heads);
        for i in 0..config.heads {
            let w_a = param(
                format!("{prefix}.pool.head{i}.W_a"),
                &[d_enc, config.attention_dim],
                Some((1.0 / d_enc as f64).sqrt()),
            )?;
            let v_a = param(
                format!("{prefix}.pool.head{i}.v_a"),
                &[config.attention_dim],
                Some((1.0 / config.attention_dim as f64).sqrt()),
            )?;
            heads.push((w_a, v_a));
        }
        Ok(EncoderLayout {
            config: config.clone(),
            prefix: prefix.to_string(),
            layers,
            heads,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    /// Every parameter of this encoder.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.recurrent_ids();
        ids.extend(self.heads.iter().flat_map(|&(w, v)| [w, v]));
        ids
    }

    fn recurrent_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for p in self.layers.iter().flatten() {
            match *p {
                DirectionParams::Sru {
                    w,
                    w_f,
                    w_r,
                    proj,
                    v_f,
                    v_r,
                    b_f,
                    b_r,
                } => {
                    ids.extend([w, w_f, w_r]);
                    ids.extend(proj);
                    ids.extend([v_f, v_r, b_f, b_r]);
                }
                DirectionParams::Lstm { w_ih, w_hh, bias } => ids.extend([w_ih, w_hh, bias]),
            }
        }
        ids
    }

    /// Scalar count of the recurrent layers.
    pub fn recurrent_param_count<T: Element>(&self, store: &ParamStore<T>) -> usize {
        self.recurrent_ids().iter().map(|&id| store.get(id).len()).sum()
    }

    /// Scalar count including attention pooling.
    pub fn param_count<T: Element>(&self, store: &ParamStore<T>) -> usize {
        self.param_ids().iter().map(|&id| store.get(id).len()).sum()
    }

    /// Encodes a padded batch. `vars[i]` is the graph variable bound to
    /// parameter `i` of the store this layout refers to.
    pub fn forward<T: Element>(&self, g: &mut Graph<T>, vars: &[Var], batch: &SequenceBatch<T>) -> Result<EncoderOutput> {
        if batch.embeddings.shape().get(1) != Some(&self.config.input_dim) {
            return Err(Error::Shape {
                op: "encoder input",
                lhs: batch.embeddings.shape().to_vec(),
                rhs: vec![batch.batch() * batch.steps, self.config.input_dim],
            });
        }
        let v = |id: ParamId| vars[id.0];
        let (bsz, steps) = (batch.batch(), batch.steps);
        let dh = self.config.hidden_dim;
        let reversal = if self.config.bidirectional { batch.reversal() } else { Vec::new() };
        let mut x = g.constant(batch.embeddings.clone());
        for (l, dirs) in self.layers.iter().enumerate() {
            let mut outs = Vec::with_capacity(dirs.len());
            for (j, p) in dirs.iter().enumerate() {
                let input = if j == 1 { g.gather_rows(x, &reversal)? } else { x };
                let h = match *p {
                    DirectionParams::Sru {
                        w,
                        w_f,
                        w_r,
                        proj,
                        v_f,
                        v_r,
                        b_f,
                        b_r,
                    } => {
                        // Separate products avoid copying the weights into one
                        // fused matrix on every call.
                        let candidate = g.matmul_t(input, v(w), false, true)?;
                        let forget = g.matmul_t(input, v(w_f), false, true)?;
                        let reset = g.matmul_t(input, v(w_r), false, true)?;
                        let highway = match proj {
                            Some(p) => g.matmul_t(input, v(p), false, true)?,
                            None if self.config.layer_input_dim(l) == dh => input,
                            None => g.slice(input, 1, j * dh, (j + 1) * dh)?,
                        };
                        let inputs = SruInputs {
                            candidate,
                            forget,
                            reset,
                            highway,
                            v_f: v(v_f),
                            v_r: v(v_r),
                            b_f: v(b_f),
                            b_r: v(b_r),
                            c0: None,
                        };
                        g.sru(inputs, bsz, steps)?.0
                    }
                    DirectionParams::Lstm { w_ih, w_hh, bias } => {
                        let pre = g.matmul_t(input, v(w_ih), false, true)?;
                        let projected = g.add_bias(pre, v(bias))?;
                        let inputs = LstmInputs {
                            projected,
                            w_hh: v(w_hh),
                            h0: None,
                            c0: None,
                        };
                        g.lstm(inputs, bsz, steps)?.0
                    }
                };
                outs.push(if j == 1 { g.gather_rows(h, &reversal)? } else { h });
            }
            x = if outs.len() == 1 { outs[0] } else { g.concat(&outs, 1)? };
        }
        let heads: Vec<HeadVars> = self
            .heads
            .iter()
            .map(|&(w_a, v_a)| HeadVars { w_a: v(w_a), v_a: v(v_a) })
            .collect();
        let pool = attention_pool(g, x, &batch.mask(), bsz, steps, &heads, self.config.activation)?;
        Ok(EncoderOutput {
            hidden: x,
            weights: pool.weights,
            pooled: pool.pooled,
        })
    }

    /// Inference-only encoding of token sequences, `seqs.len() x d_enc`.
    pub fn encode<T: Element, S: AsRef<str>>(
        &self,
        store: &ParamStore<T>,
        embedding: &SubwordEmbedding,
        seqs: &[&[S]],
    ) -> Result<Tensor<T>> {
        let batch = SequenceBatch::embed(embedding, seqs)?;
        let mut g = Graph::new();
        let vars = store.bind(&mut g, false);
        let out = self.forward(&mut g, &vars, &batch)?;
        Ok(g.value(out.pooled).clone())
    }
}
