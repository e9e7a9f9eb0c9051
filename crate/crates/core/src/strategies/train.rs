//! Single-task training loop shared by every strategy: seeded epoch
//! shuffling, mini-batch Adam, best-validation snapshotting, and an
//! optional per-step rule (quadratic regularizers or gradient
//! projection against a memory batch).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adapters::AdapterParams;
use crate::error::{Error, Result};
use crate::model::{self, EncodedPair, LmConfig, TrainTarget};
use crate::optim::Optimizer;
use crate::params::ParamSet;
use crate::strategies::agem::agem_project;
use crate::strategies::regularize::RegularizerState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 5e-3,
            batch_size: 8,
            epochs: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainLog {
    pub task_label: String,
    /// Mean training loss per epoch (task loss only, penalties excluded).
    pub train_loss: Vec<f64>,
    /// Mean validation loss per epoch; mirrors train loss when there is
    /// no validation split.
    pub valid_loss: Vec<f64>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
}

/// Extra work applied at each optimizer step.
pub enum StepRule<'a> {
    Plain,
    /// Quadratic drift penalties added to the gradient (L2 / EWC). An
    /// empty slice behaves exactly like `Plain`.
    Regularized(&'a [RegularizerState]),
    /// Project the gradient so the loss on a memory batch never
    /// increases. Empty memory behaves exactly like `Plain`.
    Agem {
        memory_pairs: &'a [EncodedPair],
        batch_size: usize,
    },
}

fn mean_loss(
    cfg: &LmConfig,
    base: &ParamSet,
    adapter: Option<&AdapterParams>,
    pairs: &[EncodedPair],
) -> Result<f64> {
    let mut total = 0.0;
    for p in pairs {
        total += model::lm_loss(cfg, base, adapter, p)?;
    }
    Ok(total / pairs.len() as f64)
}

/// Trains one task and restores the best-validation parameters before
/// returning. Exactly one of base / adapter receives updates, chosen by
/// `target`; the other is bit-identical afterwards.
pub fn train_task(
    cfg: &LmConfig,
    base: &mut ParamSet,
    mut adapter: Option<&mut AdapterParams>,
    target: TrainTarget,
    task_label: &str,
    train_pairs: &[EncodedPair],
    valid_pairs: &[EncodedPair],
    tc: &TrainConfig,
    rule: StepRule,
) -> Result<TrainLog> {
    if train_pairs.is_empty() {
        return Err(Error::EmptyData(format!("task `{task_label}` train split")));
    }
    if target == TrainTarget::None {
        return Err(Error::Config("training target is None".into()));
    }
    if target == TrainTarget::Adapter && adapter.is_none() {
        return Err(Error::Config("adapter target without an adapter".into()));
    }
    if tc.batch_size == 0 || tc.epochs == 0 {
        return Err(Error::Config("batch_size and epochs must be >= 1".into()));
    }

    let mut opt = Optimizer::adam(tc.lr);
    let mut agem_rng = ChaCha8Rng::seed_from_u64(tc.seed.wrapping_mul(31).wrapping_add(7));
    let mut log = TrainLog {
        task_label: task_label.to_string(),
        train_loss: Vec::with_capacity(tc.epochs),
        valid_loss: Vec::with_capacity(tc.epochs),
        best_epoch: 0,
    };
    let mut best_valid = f64::INFINITY;
    let mut best_snapshot: Option<Vec<f64>> = None;

    for epoch in 0..tc.epochs {
        let mut idx: Vec<usize> = (0..train_pairs.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(tc.seed.wrapping_add(epoch as u64));
        idx.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in idx.chunks(tc.batch_size) {
            base.zero_grad();
            if let Some(a) = adapter.as_deref_mut() {
                a.params.zero_grad();
            }
            let refs: Vec<&EncodedPair> = chunk.iter().map(|&i| &train_pairs[i]).collect();
            let loss =
                model::batch_loss_and_grads(cfg, base, adapter.as_deref_mut(), &refs, target)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss);
            }
            epoch_loss += loss;
            batches += 1;

            match &rule {
                StepRule::Plain => {}
                StepRule::Regularized(states) => {
                    let trainable = match target {
                        TrainTarget::Adapter => &mut adapter.as_mut().unwrap().params,
                        _ => &mut *base,
                    };
                    for s in *states {
                        s.add_grad(trainable)?;
                    }
                }
                StepRule::Agem {
                    memory_pairs,
                    batch_size,
                } => {
                    if !memory_pairs.is_empty() {
                        let g = match target {
                            TrainTarget::Adapter => adapter.as_ref().unwrap().params.flatten_grad(),
                            _ => base.flatten_grad(),
                        };
                        base.zero_grad();
                        if let Some(a) = adapter.as_deref_mut() {
                            a.params.zero_grad();
                        }
                        let take = (*batch_size).max(1).min(memory_pairs.len());
                        let mut mem_idx: Vec<usize> = (0..memory_pairs.len()).collect();
                        mem_idx.shuffle(&mut agem_rng);
                        let mem_refs: Vec<&EncodedPair> = mem_idx[..take]
                            .iter()
                            .map(|&i| &memory_pairs[i])
                            .collect();
                        let ref_loss = model::batch_loss_and_grads(
                            cfg,
                            base,
                            adapter.as_deref_mut(),
                            &mem_refs,
                            target,
                        )?;
                        if !ref_loss.is_finite() {
                            return Err(Error::NonFiniteLoss);
                        }
                        let trainable = match target {
                            TrainTarget::Adapter => &mut adapter.as_mut().unwrap().params,
                            _ => &mut *base,
                        };
                        let g_ref = trainable.flatten_grad();
                        let projected = agem_project(&g, &g_ref)?;
                        trainable.assign_flat_grad(&projected)?;
                    }
                }
            }

            let trainable = match target {
                TrainTarget::Adapter => &mut adapter.as_mut().unwrap().params,
                _ => &mut *base,
            };
            opt.step(trainable)?;
        }
        let train_loss = epoch_loss / batches as f64;
        let valid_loss = if valid_pairs.is_empty() {
            train_loss
        } else {
            mean_loss(cfg, base, adapter.as_deref(), valid_pairs)?
        };
        if !valid_loss.is_finite() {
            return Err(Error::NonFiniteLoss);
        }
        log.train_loss.push(train_loss);
        log.valid_loss.push(valid_loss);
        if valid_loss < best_valid {
            best_valid = valid_loss;
            log.best_epoch = epoch;
            let trainable = match target {
                TrainTarget::Adapter => &adapter.as_ref().unwrap().params,
                _ => &*base,
            };
            best_snapshot = Some(trainable.flatten());
        }
    }

    if let Some(snap) = best_snapshot {
        let trainable = match target {
            TrainTarget::Adapter => &mut adapter.as_mut().unwrap().params,
            _ => &mut *base,
        };
        trainable.assign_flat(&snap)?;
    }
    Ok(log)
}
