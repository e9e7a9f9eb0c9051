//! SGD-with-momentum and Adam over a [`ParamSet`], with optional global
//! gradient-norm clipping.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OptKind {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

#[derive(Debug, Clone)]
struct Slot {
    m: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptKind,
    pub lr: f64,
    pub clip_norm: Option<f64>,
    pub step_count: u64,
    slots: HashMap<String, Slot>,
}

impl Optimizer {
    pub fn new(kind: OptKind, lr: f64, clip_norm: Option<f64>) -> Self {
        Optimizer {
            kind,
            lr,
            clip_norm,
            step_count: 0,
            slots: HashMap::new(),
        }
    }

    /// Adam(0.9, 0.999, 1e-8) with clip norm 1.0, the transformer
    /// fine-tuning standard.
    pub fn adam(lr: f64) -> Self {
        Self::new(
            OptKind::Adam {
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            lr,
            Some(1.0),
        )
    }

    pub fn sgd(lr: f64, momentum: f64) -> Self {
        Self::new(OptKind::Sgd { momentum }, lr, None)
    }

    /// Applies one update from the gradients accumulated in `params`.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        for p in params.iter() {
            if p.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::PoisonedGradient {
                    param: p.name.clone(),
                });
            }
        }

        let mut scale = 1.0;
        if let Some(clip) = self.clip_norm {
            let norm = params
                .iter()
                .flat_map(|p| p.grad.iter())
                .map(|g| g * g)
                .sum::<f64>()
                .sqrt();
            if norm > clip {
                scale = clip / norm;
            }
        }

        self.step_count += 1;
        let t = self.step_count as i32;
        for p in params.iter_mut() {
            let slot = self.slots.entry(p.name.clone()).or_insert_with(|| Slot {
                m: vec![0.0; p.numel()],
                v: vec![0.0; p.numel()],
            });
            if slot.m.len() != p.numel() {
                return Err(Error::ShapeMismatch {
                    op: "optimizer_step",
                    left: vec![slot.m.len()],
                    right: vec![p.numel()],
                });
            }
            match self.kind {
                OptKind::Sgd { momentum } => {
                    for i in 0..p.numel() {
                        let g = p.grad[i] * scale;
                        slot.m[i] = momentum * slot.m[i] + g;
                        p.data[i] -= self.lr * slot.m[i];
                    }
                }
                OptKind::Adam { beta1, beta2, eps } => {
                    let bc1 = 1.0 - beta1.powi(t);
                    let bc2 = 1.0 - beta2.powi(t);
                    for i in 0..p.numel() {
                        let g = p.grad[i] * scale;
                        slot.m[i] = beta1 * slot.m[i] + (1.0 - beta1) * g;
                        slot.v[i] = beta2 * slot.v[i] + (1.0 - beta2) * g * g;
                        let mh = slot.m[i] / bc1;
                        let vh = slot.v[i] / bc2;
                        p.data[i] -= self.lr * mh / (vh.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
