//! Adaptive-moment (Adam) and RMSProp optimizers over named parameters.
//!
//! `step` never clears gradients; call [`crate::tensor::zero_grads`]
//! explicitly between updates.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::TensorError;
use crate::tensor::{lit, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// Adam with bias correction.
    AdaptiveMoment { beta1: f64, beta2: f64, eps: f64 },
    /// Uncentered RMSProp without momentum.
    RmsPropagation { alpha: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::AdaptiveMoment {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn rmsprop() -> Self {
        OptimizerKind::RmsPropagation {
            alpha: 0.99,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
struct Accumulator<T> {
    first: Vec<T>,
    second: Vec<T>,
}

/// Optimizer state: rule, learning rate, per-parameter accumulators keyed by
/// parameter name, and the number of steps taken.
#[derive(Debug, Clone)]
pub struct OptimizerState<T: Scalar = f32> {
    kind: OptimizerKind,
    learning_rate: f64,
    step_count: u64,
    accumulators: HashMap<String, Accumulator<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Result<Self, TensorError> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(TensorError::InvalidArgument {
                op: "optimizer",
                reason: format!("learning rate must be positive, got {learning_rate}"),
            });
        }
        Ok(OptimizerState {
            kind,
            learning_rate,
            step_count: 0,
            accumulators: HashMap::new(),
        })
    }

    pub fn adam(learning_rate: f64) -> Result<Self, TensorError> {
        Self::new(OptimizerKind::adam(), learning_rate)
    }

    pub fn rmsprop(learning_rate: f64) -> Result<Self, TensorError> {
        Self::new(OptimizerKind::rmsprop(), learning_rate)
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one update to every parameter in `params`.
    ///
    /// All parameters must carry a gradient; otherwise nothing is updated and
    /// the missing names are reported.
    pub fn step(&mut self, params: &[(String, Tensor<T>)]) -> Result<(), TensorError> {
        let missing: Vec<String> = params
            .iter()
            .filter(|(_, p)| !p.has_grad())
            .map(|(name, _)| name.clone())
            .collect();
        if !missing.is_empty() {
            return Err(TensorError::MissingGrad(missing));
        }
        for (name, p) in params {
            if let Some(acc) = self.accumulators.get(name) {
                if acc.first.len() != p.numel() {
                    return Err(TensorError::ShapeMismatch {
                        op: "optimizer_step",
                        lhs: vec![acc.first.len()],
                        rhs: p.shape().to_vec(),
                    });
                }
            }
        }

        self.step_count += 1;
        let t = self.step_count as f64;
        let lr = self.learning_rate;
        for (name, p) in params {
            let grad = p.grad().expect("checked above");
            let acc = self
                .accumulators
                .entry(name.clone())
                .or_insert_with(|| Accumulator {
                    first: vec![T::zero(); grad.len()],
                    second: vec![T::zero(); grad.len()],
                });
            match self.kind {
                OptimizerKind::AdaptiveMoment { beta1, beta2, eps } => {
                    let (b1, b2): (T, T) = (lit(beta1), lit(beta2));
                    let step_size: T = lit(lr / (1.0 - beta1.powf(t)));
                    let bias2: T = lit(1.0 - beta2.powf(t));
                    let eps: T = lit(eps);
                    p.update_data(|w| {
                        for (i, (w, &g)) in w.iter_mut().zip(&grad).enumerate() {
                            acc.first[i] = b1 * acc.first[i] + (T::one() - b1) * g;
                            acc.second[i] = b2 * acc.second[i] + (T::one() - b2) * g * g;
                            let denom = (acc.second[i] / bias2).sqrt() + eps;
                            *w = *w - step_size * acc.first[i] / denom;
                        }
                    });
                }
                OptimizerKind::RmsPropagation { alpha, eps } => {
                    let a: T = lit(alpha);
                    let (lr, eps): (T, T) = (lit(lr), lit(eps));
                    p.update_data(|w| {
                        for (i, (w, &g)) in w.iter_mut().zip(&grad).enumerate() {
                            acc.second[i] = a * acc.second[i] + (T::one() - a) * g * g;
                            *w = *w - lr * g / (acc.second[i].sqrt() + eps);
                        }
                    });
                }
            }
        }
        Ok(())
    }
}
