use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nncore::Gradients;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerKind {
    SgdMomentum {
        momentum: f64,
        weight_decay: f64,
    },
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
        weight_decay: f64,
    },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn sgd(momentum: f64, weight_decay: f64) -> Self {
        OptimizerKind::SgdMomentum {
            momentum,
            weight_decay,
        }
    }
}

/// Optimizer hyperparameters plus per-parameter moment buffers.
///
/// Weight decay is plain L2: `g ← g + λ·p` before the update rule.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    /// Momentum buffer (SGD) or first moment (Adam).
    pub first: Vec<Vec<f64>>,
    /// Second moment (Adam only; empty blocks for SGD).
    pub second: Vec<Vec<f64>>,
    pub steps: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, params: &[&[f64]]) -> Self {
        let zeros = |b: &&[f64]| vec![0.0; b.len()];
        let second = match kind {
            OptimizerKind::Adam { .. } => params.iter().map(zeros).collect(),
            OptimizerKind::SgdMomentum { .. } => params.iter().map(|_| Vec::new()).collect(),
        };
        OptimizerState {
            kind,
            first: params.iter().map(zeros).collect(),
            second,
            steps: 0,
        }
    }

    /// Apply one update. Non-finite gradients abort the step before any
    /// parameter or buffer is touched.
    pub fn step(&mut self, mut params: Vec<&mut [f64]>, grads: &Gradients, lr: f64) -> Result<()> {
        if params.len() != grads.blocks.len() || params.len() != self.first.len() {
            return Err(Error::DimensionMismatch {
                context: "optimizer parameter blocks",
                expected: self.first.len(),
                actual: params.len(),
            });
        }
        for (block, (p, g)) in params.iter().zip(&grads.blocks).enumerate() {
            if p.len() != g.len() || p.len() != self.first[block].len() {
                return Err(Error::DimensionMismatch {
                    context: "optimizer block length",
                    expected: self.first[block].len(),
                    actual: g.len(),
                });
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient { block });
            }
        }
        self.steps += 1;
        match self.kind {
            OptimizerKind::SgdMomentum {
                momentum,
                weight_decay,
            } => {
                for ((p, g), buf) in params.iter_mut().zip(&grads.blocks).zip(&mut self.first) {
                    for ((pv, &gv), bv) in p.iter_mut().zip(g).zip(buf.iter_mut()) {
                        let d = gv + weight_decay * *pv;
                        *bv = momentum * *bv + d;
                        *pv -= lr * *bv;
                    }
                }
            }
            OptimizerKind::Adam {
                beta1,
                beta2,
                eps,
                weight_decay,
            } => {
                let t = self.steps as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(&grads.blocks)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    for (((pv, &gv), mv), vv) in
                        p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut())
                    {
                        let d = gv + weight_decay * *pv;
                        *mv = beta1 * *mv + (1.0 - beta1) * d;
                        *vv = beta2 * *vv + (1.0 - beta2) * d * d;
                        let m_hat = *mv / c1;
                        let v_hat = *vv / c2;
                        *pv -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
