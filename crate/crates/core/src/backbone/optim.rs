use serde::{Deserialize, Serialize};

use super::TrainState;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// `lr · ½(1 + cos(π·t/T))` over the steps of one training phase.
    Cosine,
}

/// SGD with heavy-ball momentum: `v ← μ·v + g + λ·θ`, `θ ← θ − lr·v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    pub schedule: LrSchedule,
    /// Gradients are rescaled so their global L2 norm is at most this value.
    pub max_grad_norm: Option<f32>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            schedule: LrSchedule::Cosine,
            max_grad_norm: Some(5.0),
        }
    }
}

impl OptimizerConfig {
    pub fn with_lr(learning_rate: f32) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation("learning_rate must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::validation("momentum must be in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::validation("weight_decay must be >= 0"));
        }
        if let Some(c) = self.max_grad_norm {
            if !(c > 0.0) {
                return Err(Error::validation("max_grad_norm must be > 0"));
            }
        }
        Ok(())
    }

    /// Copy with the learning rate the schedule prescribes at step `t` of `total`.
    pub fn at_step(&self, t: u64, total: u64) -> Self {
        let lr = match self.schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Cosine => {
                let frac = if total == 0 { 0.0 } else { t as f64 / total as f64 };
                (self.learning_rate as f64 * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())) as f32
            }
        };
        Self {
            learning_rate: lr,
            schedule: LrSchedule::Constant,
            ..*self
        }
    }
}

/// One optimiser step with `config.learning_rate`; increments `state.step`.
pub fn apply_update(state: &mut TrainState, grads: &[Tensor<f32>], config: &OptimizerConfig) -> Result<()> {
    let n = state.model.parameters().len();
    if grads.len() != n {
        return Err(Error::validation(format!(
            "got {} gradient tensors for {n} parameters",
            grads.len()
        )));
    }
    if state.velocity.len() != n {
        state.reset_optimizer();
    }
    for (p, g) in state.model.parameters().into_iter().zip(grads) {
        if p.shape != g.shape {
            return Err(Error::validation(format!(
                "gradient for {} has shape {:?}, parameter has {:?}",
                p.name, g.shape, p.shape
            )));
        }
    }
    let OptimizerConfig {
        learning_rate: lr,
        momentum: mu,
        weight_decay: wd,
        ..
    } = *config;
    let step = state.step;
    let clip = match config.max_grad_norm {
        Some(c) => {
            let norm = grads
                .iter()
                .flat_map(|g| g.data.iter())
                .map(|&x| (x as f64) * (x as f64))
                .sum::<f64>()
                .sqrt();
            if norm > c as f64 {
                (c as f64 / norm) as f32
            } else {
                1.0
            }
        }
        None => 1.0,
    };
    for ((p, g), v) in state
        .model
        .parameters_mut()
        .into_iter()
        .zip(grads)
        .zip(state.velocity.iter_mut())
    {
        for ((theta, grad), vel) in p.data.iter_mut().zip(&g.data).zip(v.data.iter_mut()) {
            *vel = mu * *vel + clip * *grad + wd * *theta;
            *theta -= lr * *vel;
        }
        if !p.is_finite() {
            return Err(Error::numeric(step, format!("parameter {} became non-finite", p.name)));
        }
    }
    state.step += 1;
    Ok(())
}
