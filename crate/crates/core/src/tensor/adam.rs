use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ParamSet;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Self::default()
        }
    }
}

/// Adam with bias correction. Moment buffers are laid out like the
/// [`ParamSet`] the optimizer is first stepped with.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from the accumulated gradients. Gradients are left
    /// in place; callers zero them before the next accumulation. A non-finite
    /// gradient aborts the step without touching the parameters.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        for (name, p) in params.iter() {
            if !p.grad.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite gradient in parameter `{name}`"
                )));
            }
        }
        if self.first.is_empty() {
            for (_, p) in params.iter() {
                self.first.push(vec![0.0; p.value.len()]);
                self.second.push(vec![0.0; p.value.len()]);
            }
        }
        if self.first.len() != params.len() {
            return Err(Error::Contract(
                "optimizer state does not match the parameter set".into(),
            ));
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (i, (_, p)) in params.entries_mut().iter_mut().enumerate() {
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            if m.len() != p.value.len() {
                return Err(Error::Contract(
                    "optimizer state does not match the parameter set".into(),
                ));
            }
            let grad = p.grad.data();
            let value = p.value.data_mut();
            for j in 0..value.len() {
                let g = grad[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                value[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
