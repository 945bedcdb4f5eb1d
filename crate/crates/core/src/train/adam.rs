//! Adam with bias correction, applied in place over a fixed parameter
//! list.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: Vec<Moments>,
}

struct Moments {
    first: Vec<f64>,
    second: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, params: &[Tensor]) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: params
                .iter()
                .map(|p| Moments {
                    first: vec![0.0; p.len()],
                    second: vec![0.0; p.len()],
                })
                .collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update from the gradients currently held by
    /// `params`; gradients are zeroed afterwards. The list must match the
    /// one the optimizer was built with.
    pub fn step(&mut self, params: &[Tensor]) -> Result<()> {
        if params.len() != self.moments.len() {
            return Err(Error::InvalidArgument(format!(
                "optimizer tracks {} tensors, got {}",
                self.moments.len(),
                params.len()
            )));
        }
        self.step = self
            .step
            .checked_add(1)
            .ok_or_else(|| Error::InvalidArgument("step counter overflow".into()))?;
        let correction1 = 1.0 - self.beta1.powi(self.step as i32);
        let correction2 = 1.0 - self.beta2.powi(self.step as i32);

        for (slot, param) in self.moments.iter_mut().zip(params) {
            if slot.first.len() != param.len() {
                return Err(Error::dims(
                    "adam_step",
                    (1, slot.first.len()),
                    param.shape(),
                ));
            }
            param.with_values_and_grad_mut(|values, grads| {
                for i in 0..values.len() {
                    let g = grads[i];
                    slot.first[i] = self.beta1 * slot.first[i] + (1.0 - self.beta1) * g;
                    slot.second[i] = self.beta2 * slot.second[i] + (1.0 - self.beta2) * g * g;
                    let m_hat = slot.first[i] / correction1;
                    let v_hat = slot.second[i] / correction2;
                    values[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                    grads[i] = 0.0;
                }
            });
        }
        Ok(())
    }
}

/// Scales all gradients so their global L2 norm is at most `max_norm`;
/// returns the pre-clip norm.
pub fn clip_global_norm(params: &[Tensor], max_norm: f64) -> f64 {
    let mut sq = 0.0;
    for p in params {
        sq += p.grad().iter().map(|g| g * g).sum::<f64>();
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for p in params {
            p.with_values_and_grad_mut(|_, grads| {
                for g in grads {
                    *g *= scale;
                }
            });
        }
    }
    norm
}
