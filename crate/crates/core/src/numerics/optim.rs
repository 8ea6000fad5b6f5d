use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::params::ParamStore;
use super::tensor::{Element, Tensor};

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
        }
    }
}

/// Per-parameter first and second moment estimates.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<Vec<T>>,
    pub second_moment: Vec<Vec<T>>,
}

impl<T: Element> AdamState<T> {
    pub fn new(params: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros = || params.tensors().iter().map(|t| vec![T::zero(); t.len()]).collect();
        AdamState {
            config,
            step: 0,
            first_moment: zeros(),
            second_moment: zeros(),
        }
    }
}

/// One bias-corrected Adam update. Gradients are checked for finiteness
/// before any parameter is touched.
pub fn adam_step<T: Element>(
    params: &mut ParamStore<T>,
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    if grads.len() != params.len() || state.first_moment.len() != params.len() {
        return Err(Error::invalid(format!(
            "adam: {} parameters, {} gradients, {} moment buffers",
            params.len(),
            grads.len(),
            state.first_moment.len()
        )));
    }
    for (id, g) in params.ids().zip(grads) {
        if g.shape() != params.get(id).shape() {
            return Err(Error::Shape {
                op: "adam gradient",
                lhs: params.get(id).shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
        if !g.all_finite() {
            return Err(Error::NonFinite(format!(
                "gradient of parameter {}",
                params.name(id)
            )));
        }
    }
    state.step += 1;
    let cfg = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (T::from_f64(cfg.beta1), T::from_f64(cfg.beta2));
    let (one_b1, one_b2) = (T::from_f64(1.0 - cfg.beta1), T::from_f64(1.0 - cfg.beta2));
    let step_size = T::from_f64(lr / bc1);
    let inv_bc2_sqrt = T::from_f64(1.0 / bc2.sqrt());
    let eps = T::from_f64(cfg.eps);
    for (((p, g), m), v) in params
        .tensors_mut()
        .iter_mut()
        .zip(grads)
        .zip(&mut state.first_moment)
        .zip(&mut state.second_moment)
    {
        let pd = p.data_mut();
        for i in 0..pd.len() {
            let gi = g.data()[i];
            m[i] = b1 * m[i] + one_b1 * gi;
            v[i] = b2 * v[i] + one_b2 * gi * gi;
            pd[i] = pd[i] - step_size * m[i] / (v[i].sqrt() * inv_bc2_sqrt + eps);
        }
    }
    Ok(())
}

/// Warmup-then-inverse-square-root learning rate schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoamSchedule {
    pub model_dim: usize,
    pub warmup_steps: u64,
    pub factor: f64,
}

impl NoamSchedule {
    pub fn new(model_dim: usize, warmup_steps: u64, factor: f64) -> Result<Self> {
        if warmup_steps == 0 || model_dim == 0 || factor <= 0.0 {
            return Err(Error::invalid(
                "noam schedule needs warmup_steps >= 1, model_dim >= 1, factor > 0",
            ));
        }
        Ok(NoamSchedule {
            model_dim,
            warmup_steps,
            factor,
        })
    }

    /// `factor * model_dim^-0.5 * min(step^-0.5, step * warmup^-1.5)`.
    pub fn lr(&self, step: u64) -> Result<f64> {
        if step == 0 {
            return Err(Error::invalid("noam learning rate is undefined at step 0"));
        }
        let s = step as f64;
        let w = self.warmup_steps as f64;
        Ok(self.factor * (self.model_dim as f64).powf(-0.5) * s.powf(-0.5).min(s * w.powf(-1.5)))
    }
}
