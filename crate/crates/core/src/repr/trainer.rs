use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::numkit::{adam_step, AdamConfig, AdamState, NumError};

use super::{ReprBatch, ReprError, ReprLoss, ReprModel};

/// Decay of the moving dynamics loss used by the relabeling threshold.
pub const DYN_EMA_DECAY: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReprTrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    /// Weight of the dynamics loss.
    pub beta: f64,
    /// Weight of the KL term inside the VAE loss.
    pub kl_weight: f64,
    pub max_grad_norm: Option<f64>,
}

impl Default for ReprTrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 64,
            beta: 10.0,
            kl_weight: 0.5,
            max_grad_norm: None,
        }
    }
}

/// The representation model with its optimizer and running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ReprTrainer {
    pub model: ReprModel,
    pub adam: AdamState,
    pub config: ReprTrainConfig,
    /// Exponential moving average of the dynamics loss, seeded with the first
    /// observed value.
    pub moving_dyn_loss: Option<f64>,
    pub updates: u64,
}

impl ReprTrainer {
    pub fn new(model: ReprModel, config: ReprTrainConfig) -> Self {
        let adam = AdamState::new(
            model.params(),
            AdamConfig {
                max_grad_norm: config.max_grad_norm,
                ..AdamConfig::with_lr(config.lr)
            },
        );
        Self {
            model,
            adam,
            config,
            moving_dyn_loss: None,
            updates: 0,
        }
    }

    /// One joint Adam step on table, encoder and decoder.
    ///
    /// On a numeric fault the parameters are left untouched.
    pub fn train_batch<R: Rng + ?Sized>(&mut self, batch: &ReprBatch, rng: &mut R) -> Result<ReprLoss, ReprError> {
        let noise = Array2::from_shape_fn((batch.len(), self.model.d2()), |_| rng.sample(StandardNormal));
        let (loss, grads) = self
            .model
            .loss_and_grads(batch, noise.view(), self.config.beta, self.config.kl_weight)?;
        if !loss.total.is_finite() {
            return Err(NumError::NumericFault(format!("representation loss is {}", loss.total)).into());
        }
        adam_step(self.model.params_mut(), &grads, &mut self.adam)?;
        self.model.repair_table(rng);
        self.moving_dyn_loss = Some(match self.moving_dyn_loss {
            None => loss.dynamics,
            Some(m) => DYN_EMA_DECAY * m + (1.0 - DYN_EMA_DECAY) * loss.dynamics,
        });
        self.updates += 1;
        Ok(loss)
    }
}
