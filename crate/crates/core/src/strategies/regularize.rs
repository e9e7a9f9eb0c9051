//! Quadratic parameter-drift penalty shared by L2 and EWC, plus the
//! diagonal empirical Fisher estimator.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, EncodedPair, LmConfig, TrainTarget};
use crate::params::ParamSet;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegularizerState {
    /// Frozen parameter snapshot θ* from the previous task.
    pub theta_star: Vec<f64>,
    /// Per-parameter weights Ω: all ones for L2, diagonal Fisher for EWC.
    pub omega: Vec<f64>,
    pub lambda: f64,
}

impl RegularizerState {
    pub fn l2(theta_star: Vec<f64>, lambda: f64) -> Self {
        let omega = vec![1.0; theta_star.len()];
        RegularizerState {
            theta_star,
            omega,
            lambda,
        }
    }

    pub fn ewc(theta_star: Vec<f64>, fisher: Vec<f64>, lambda: f64) -> Result<Self> {
        if fisher.len() != theta_star.len() {
            return Err(Error::ShapeMismatch {
                op: "regularizer",
                left: vec![theta_star.len()],
                right: vec![fisher.len()],
            });
        }
        Ok(RegularizerState {
            theta_star,
            omega: fisher,
            lambda,
        })
    }

    /// λ Σ_j Ω_j (θ_j − θ*_j)²
    pub fn penalty(&self, theta: &[f64]) -> Result<f64> {
        if theta.len() != self.theta_star.len() {
            return Err(Error::ShapeMismatch {
                op: "reg_penalty",
                left: vec![theta.len()],
                right: vec![self.theta_star.len()],
            });
        }
        if self.lambda == 0.0 {
            return Ok(0.0);
        }
        Ok(self.lambda
            * theta
                .iter()
                .zip(&self.theta_star)
                .zip(&self.omega)
                .map(|((t, s), o)| o * (t - s) * (t - s))
                .sum::<f64>())
    }

    /// Adds d penalty / dθ = 2λΩ(θ − θ*) into the accumulated gradients.
    /// No-op at λ = 0 so a zero-λ run is bit-identical to VANILLA.
    pub fn add_grad(&self, params: &mut ParamSet) -> Result<f64> {
        let theta = params.flatten();
        let penalty = self.penalty(&theta)?;
        if self.lambda == 0.0 {
            return Ok(0.0);
        }
        let mut off = 0;
        for p in params.iter_mut() {
            for i in 0..p.numel() {
                let j = off + i;
                p.grad[i] += 2.0 * self.lambda * self.omega[j] * (theta[j] - self.theta_star[j]);
            }
            off += p.numel();
        }
        Ok(penalty)
    }
}

/// Mean of elementwise-squared gradients: the diagonal empirical Fisher
/// given one gradient vector per example.
pub fn fisher_diagonal<I>(grads: I) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = Vec<f64>>,
{
    let mut acc: Option<Vec<f64>> = None;
    let mut n = 0usize;
    for g in grads {
        match &mut acc {
            None => acc = Some(g.iter().map(|v| v * v).collect()),
            Some(a) => {
                if a.len() != g.len() {
                    return Err(Error::ShapeMismatch {
                        op: "fisher_diagonal",
                        left: vec![a.len()],
                        right: vec![g.len()],
                    });
                }
                for (av, gv) in a.iter_mut().zip(&g) {
                    *av += gv * gv;
                }
            }
        }
        n += 1;
    }
    let mut acc = acc.ok_or_else(|| Error::EmptyData("fisher sample".into()))?;
    acc.iter_mut().for_each(|v| *v /= n as f64);
    Ok(acc)
}

/// Diagonal empirical Fisher of the LM loss at the current θ over (at
/// most) `n_samples` examples drawn without replacement.
pub fn estimate_fisher(
    cfg: &LmConfig,
    base: &mut ParamSet,
    pairs: &[EncodedPair],
    n_samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if pairs.is_empty() || n_samples == 0 {
        return Err(Error::EmptyData("fisher sample".into()));
    }
    let mut idx: Vec<usize> = (0..pairs.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    idx.truncate(n_samples.min(pairs.len()));
    let mut grads = Vec::with_capacity(idx.len());
    for i in idx {
        base.zero_grad();
        model::batch_loss_and_grads(cfg, base, None, &[&pairs[i]], TrainTarget::Base)?;
        grads.push(base.flatten_grad());
    }
    base.zero_grad();
    fisher_diagonal(grads)
}
