//! First-order optimizers over named parameter collections.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use super::NumGradError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Per-parameter Adam moments, addressed positionally. The caller must feed
/// parameters in the same order on every step; the trainer guarantees this
/// by walking its parameter registry in insertion order.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn sgd(lr: f64) -> Self {
        Optimizer {
            kind: OptimizerKind::Sgd,
            lr,
            beta1: 0.0,
            beta2: 0.0,
            eps: 0.0,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn adam(lr: f64) -> Self {
        Optimizer {
            kind: OptimizerKind::Adam,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Apply one update. `params` and `grads` are parallel slices; a `None`
    /// gradient leaves the parameter (and its moments) untouched.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor],
        grads: &[Option<&Tensor>],
    ) -> Result<(), NumGradError> {
        if params.len() != grads.len() {
            return Err(NumGradError::ShapeMismatch {
                op: "optimizer step".into(),
                shapes: format!("{} params vs {} grads", params.len(), grads.len()),
            });
        }
        if self.m.is_empty() && self.kind == OptimizerKind::Adam {
            self.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.v = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        }
        if self.kind == OptimizerKind::Adam && self.m.len() != params.len() {
            return Err(NumGradError::ShapeMismatch {
                op: "optimizer step".into(),
                shapes: format!("{} moment slots vs {} params", self.m.len(), params.len()),
            });
        }
        self.step += 1;
        for (slot, (param, grad)) in params.iter_mut().zip(grads).enumerate() {
            let Some(grad) = grad else { continue };
            if grad.shape() != param.shape() {
                return Err(NumGradError::ShapeMismatch {
                    op: "optimizer step".into(),
                    shapes: format!("{:?} param vs {:?} grad", param.shape(), grad.shape()),
                });
            }
            if !grad.is_finite() {
                return Err(NumGradError::NonFinite("gradient".into()));
            }
            match self.kind {
                OptimizerKind::Sgd => {
                    let data = param.data_mut();
                    for (p, g) in data.iter_mut().zip(grad.data()) {
                        *p -= self.lr * g;
                    }
                }
                OptimizerKind::Adam => {
                    let t = self.step as f64;
                    let bc1 = 1.0 - self.beta1.powf(t);
                    let bc2 = 1.0 - self.beta2.powf(t);
                    let m = &mut self.m[slot];
                    let v = &mut self.v[slot];
                    let data = param.data_mut();
                    for k in 0..data.len() {
                        let g = grad.data()[k];
                        m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                        v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                        let mhat = m[k] / bc1;
                        let vhat = v[k] / bc2;
                        data[k] -= self.lr * mhat / (vhat.sqrt() + self.eps);
                    }
                }
            }
        }
        Ok(())
    }
}
