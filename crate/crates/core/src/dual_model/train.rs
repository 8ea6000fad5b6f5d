use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{save_checkpoint, TrainerState};
use super::sampler::{NegativeSampler, NegativeSet};
use super::{DualEncoder, LossConfig};
use crate::corpus::TrainingExample;
use crate::error::{Error, Result};
use crate::eval::{auc, ScoredPair};
use crate::numerics::{adam_step, dot, AdamConfig, AdamState, Graph, NoamSchedule, Tensor};

const VALIDATION_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub max_batches_per_epoch: usize,
    pub loss: LossConfig,
    pub seed: u64,
    pub adam: AdamConfig,
    pub warmup_steps: u64,
    pub lr_factor: f64,
    /// Size of the fixed negative set used for validation loss and AUC.
    pub validation_negatives: usize,
    /// Validation examples beyond this many are ignored.
    pub max_validation_examples: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            batch_size: 200,
            negatives: 200,
            epochs: 30,
            max_batches_per_epoch: 10_000,
            loss: LossConfig::default(),
            seed: 0,
            adam: AdamConfig::default(),
            warmup_steps: 4000,
            lr_factor: 1.0,
            validation_negatives: 200,
            max_validation_examples: 10_000,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("negatives", self.negatives),
            ("epochs", self.epochs),
            ("max_batches_per_epoch", self.max_batches_per_epoch),
            ("validation_negatives", self.validation_negatives),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("training.{name} must be at least 1")));
        }
        if !(self.loss.margin.is_finite()) {
            return Err(Error::invalid("training.loss.margin must be finite"));
        }
        NoamSchedule::new(1, self.warmup_steps, self.lr_factor)?;
        Ok(())
    }
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub step: u64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_auc: Option<f64>,
    pub lr: f64,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub metrics: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_val_auc: Option<f64>,
    pub steps: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidationResult {
    pub loss: f64,
    pub auc: f64,
    /// True-response and negative scores pooled over all examples.
    pub pairs: Vec<ScoredPair>,
    pub examples: usize,
    pub negatives: usize,
}

/// Cross-entropy and pooled AUC against a fixed negative set. A negative
/// whose key equals an example's own response key is left out for that
/// example.
pub fn validate(model: &DualEncoder<f32>, examples: &[TrainingExample], negatives: &NegativeSet) -> Result<ValidationResult> {
    if examples.is_empty() {
        return Err(Error::invalid("validation needs at least one example"));
    }
    let neg_refs: Vec<&[String]> = negatives.tokens.iter().map(Vec::as_slice).collect();
    let neg = model.encode_responses(&neg_refs)?;
    let mut pairs = Vec::with_capacity(examples.len() * (negatives.len() + 1));
    let mut loss_sum = 0.0;
    for chunk in examples.chunks(VALIDATION_CHUNK) {
        let ctx_refs: Vec<&[String]> = chunk.iter().map(|e| e.context_or_role()).collect();
        let pos_refs: Vec<&[String]> = chunk.iter().map(|e| e.response_tokens.as_slice()).collect();
        let ctx = model.encode_contexts(&ctx_refs)?;
        let pos = model.encode_responses(&pos_refs)?;
        for (i, ex) in chunk.iter().enumerate() {
            let key = ex.response_key();
            let c = ctx.row(i);
            let s_pos = f64::from(dot(c, pos.row(i)));
            pairs.push(ScoredPair::new(s_pos, true));
            let mut scores = vec![s_pos];
            for (j, nk) in negatives.keys.iter().enumerate() {
                if *nk == key {
                    continue;
                }
                let s = f64::from(dot(c, neg.row(j)));
                scores.push(s);
                pairs.push(ScoredPair::new(s, false));
            }
            loss_sum += log_sum_exp(&scores) - s_pos;
        }
    }
    let loss = loss_sum / examples.len() as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("validation loss is {loss}")));
    }
    Ok(ValidationResult {
        loss,
        auc: auc(&pairs)?,
        pairs,
        examples: examples.len(),
        negatives: negatives.len(),
    })
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Owns a model during training along with the optimizer state.
pub struct Trainer {
    model: DualEncoder<f32>,
    config: TrainingConfig,
    sampler: NegativeSampler,
    adam: AdamState<f32>,
    schedule: NoamSchedule,
    step: u64,
    epoch: usize,
    rng: ChaCha8Rng,
}

impl Trainer {
    /// Builds the negative sampler from `train`.
    pub fn new(model: DualEncoder<f32>, train: &[TrainingExample], config: TrainingConfig) -> Result<Self> {
        config.validate()?;
        if train.is_empty() {
            return Err(Error::invalid("training split has no examples"));
        }
        let sampler = NegativeSampler::from_examples(train)?;
        let schedule = NoamSchedule::new(model.config().encoder.hidden_dim, config.warmup_steps, config.lr_factor)?;
        let adam = AdamState::new(model.store(), config.adam);
        Ok(Trainer {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            model,
            config,
            sampler,
            adam,
            schedule,
            step: 0,
            epoch: 0,
        })
    }

    /// Continues from a saved optimizer state.
    pub fn resume(model: DualEncoder<f32>, train: &[TrainingExample], state: TrainerState) -> Result<Self> {
        let mut t = Trainer::new(model, train, state.training)?;
        if state.adam.first_moment.len() != t.model.store().len() {
            return Err(Error::Format("optimizer state does not match the model".into()));
        }
        t.adam = state.adam;
        t.step = state.step;
        t.epoch = state.epoch;
        Ok(t)
    }

    pub fn model(&self) -> &DualEncoder<f32> {
        &self.model
    }

    pub fn into_model(self) -> DualEncoder<f32> {
        self.model
    }

    pub fn sampler(&self) -> &NegativeSampler {
        &self.sampler
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn state(&self) -> TrainerState {
        TrainerState {
            adam: self.adam.clone(),
            step: self.step,
            epoch: self.epoch,
            training: self.config.clone(),
        }
    }

    /// One optimizer step on `batch` with a freshly sampled shared negative
    /// set. Returns the batch loss before the update.
    pub fn step(&mut self, batch: &[&TrainingExample]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::invalid("empty training batch"));
        }
        let exclude: Vec<String> = batch.iter().map(|e| e.response_key()).collect();
        let picks = self.sampler.sample(&mut self.rng, self.config.negatives, &exclude)?;
        let contexts: Vec<&[String]> = batch.iter().map(|e| e.context_or_role()).collect();
        let positives: Vec<&[String]> = batch.iter().map(|e| e.response_tokens.as_slice()).collect();
        let negatives: Vec<&[String]> = picks.iter().map(|&i| self.sampler.tokens(i)).collect();

        let mut g = Graph::new();
        let vars = self.model.store().bind(&mut g, true);
        let loss = self
            .model
            .batch_loss(&mut g, &vars, &contexts, &positives, &negatives, &self.config.loss)?;
        let value = f64::from(g.value(loss).item().expect("scalar loss"));
        if !value.is_finite() {
            let first = batch[0];
            return Err(Error::NonFinite(format!(
                "training loss {value} at epoch {} step {}; batch starts with conversation {} turn {}",
                self.epoch,
                self.step + 1,
                first.conversation_id,
                first.turn_index
            )));
        }
        let mut grads = g.backward(loss)?;
        let grads: Vec<Tensor<f32>> = vars
            .iter()
            .zip(self.model.store().tensors())
            .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        self.step += 1;
        let lr = self.schedule.lr(self.step)?;
        adam_step(self.model.store_mut(), &grads, &mut self.adam, lr)?;
        Ok(value)
    }

    /// One pass over `train` in seeded shuffled order. The last partial batch
    /// is dropped unless the split is smaller than one batch.
    pub fn run_epoch(&mut self, train: &[TrainingExample]) -> Result<f64> {
        if train.is_empty() {
            return Err(Error::invalid("training split has no examples"));
        }
        self.epoch += 1;
        // Each epoch reseeds from (seed, epoch) so a resumed run matches.
        self.rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ (self.epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.rng);
        let b = self.config.batch_size.min(train.len());
        let batches = (train.len() / b).min(self.config.max_batches_per_epoch);
        let mut total = 0.0;
        for chunk in order.chunks_exact(b).take(batches) {
            let batch: Vec<&TrainingExample> = chunk.iter().map(|&i| &train[i]).collect();
            total += self.step(&batch)?;
        }
        Ok(total / batches as f64)
    }

    /// Full training run. With `out_dir`, writes `metrics.jsonl`, a checkpoint
    /// per epoch and `best.ckpt` at the best validation AUC.
    pub fn train(&mut self, train: &[TrainingExample], validation: &[TrainingExample], out_dir: Option<&Path>) -> Result<TrainReport> {
        let validation = &validation[..validation.len().min(self.config.max_validation_examples)];
        let mut val_rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ 0x5EED_0F_7A11);
        let val_negatives = if validation.is_empty() {
            None
        } else {
            let k = self.config.validation_negatives.min(self.sampler.len());
            Some(NegativeSet::draw(&self.sampler, k, &mut val_rng)?)
        };
        let mut log = match out_dir {
            Some(dir) => {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
                let path = dir.join("metrics.jsonl");
                Some(BufWriter::new(
                    File::create(&path).map_err(|e| Error::io(path.display().to_string(), e))?,
                ))
            }
            None => None,
        };
        let mut report = TrainReport {
            metrics: Vec::new(),
            best_epoch: 0,
            best_val_auc: None,
            steps: 0,
        };
        while self.epoch < self.config.epochs {
            let start = Instant::now();
            let train_loss = self.run_epoch(train)?;
            let val = match &val_negatives {
                Some(neg) => Some(validate(&self.model, validation, neg)?),
                None => None,
            };
            let m = EpochMetrics {
                epoch: self.epoch,
                step: self.step,
                train_loss,
                val_loss: val.as_ref().map(|v| v.loss),
                val_auc: val.as_ref().map(|v| v.auc),
                lr: self.schedule.lr(self.step.max(1))?,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            };
            log::info!(
                "epoch {} step {} train_loss {:.4} val_loss {:?} val_auc {:?}",
                m.epoch,
                m.step,
                m.train_loss,
                m.val_loss,
                m.val_auc
            );
            let improved = match (m.val_auc, report.best_val_auc) {
                (Some(a), Some(best)) => a > best,
                (Some(_), None) => true,
                (None, _) => true,
            };
            if improved {
                report.best_epoch = m.epoch;
                report.best_val_auc = m.val_auc;
            }
            if let (Some(dir), Some(log)) = (out_dir, log.as_mut()) {
                let line = serde_json::to_string(&m)?;
                writeln!(log, "{line}").and_then(|_| log.flush()).map_err(|e| Error::io("metrics.jsonl", e))?;
                let state = self.state();
                save_checkpoint(&dir.join(format!("epoch-{:03}.ckpt", m.epoch)), &self.model, Some(&state))?;
                if improved {
                    save_checkpoint(&dir.join("best.ckpt"), &self.model, Some(&state))?;
                }
            }
            report.metrics.push(m);
        }
        report.steps = self.step;
        Ok(report)
    }
}
