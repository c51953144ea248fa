//! Latent-space actor-critic agents (TD3 and DDPG variants), the replay
//! buffer, action decoding and representation-shift relabeling.

mod buffer;
mod learner;
mod relabel;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::envs::HybridAction;
use crate::numkit::NumError;
use crate::repr::{LatentBounds, ReprError, ReprModel};

pub use buffer::{AgentBatch, ReplayBuffer, Transition};
pub use learner::{Agent, UpdateLosses};
pub use relabel::{relabel_batch, RelabelStats};

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Repr(#[from] ReprError),
    #[error("replay buffer holds {have} transitions, {need} requested")]
    BufferTooSmall { have: usize, need: usize },
    #[error("configuration error: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algo {
    #[serde(rename = "hyar-td3")]
    Td3,
    #[serde(rename = "hyar-ddpg")]
    Ddpg,
}

impl Algo {
    pub fn as_str(self) -> &'static str {
        match self {
            Algo::Td3 => "hyar-td3",
            Algo::Ddpg => "hyar-ddpg",
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algo {
    type Err = AgentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hyar-td3" => Ok(Algo::Td3),
            "hyar-ddpg" => Ok(Algo::Ddpg),
            other => Err(AgentError::Config(format!(
                "unknown algorithm {other:?} (expected hyar-td3 or hyar-ddpg)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub algo: Algo,
    pub gamma: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub tau_actor: f64,
    pub tau_critic: f64,
    /// Std of the exploration noise added to the raw policy output.
    pub explore_sigma: f64,
    pub batch_size: usize,
    /// Critic updates per actor update.
    pub policy_delay: u64,
    pub buffer_capacity: usize,
    pub hidden: usize,
    /// Target-policy smoothing in the TD target (off by default).
    pub target_smoothing: bool,
    pub smoothing_sigma: f64,
    pub smoothing_clip: f64,
    /// Std of the noise around a relabeled table row.
    pub relabel_sigma: f64,
    /// Draws allowed for a relabeled row to stay in its own cell.
    pub relabel_redraws: usize,
    /// Dynamics-error threshold as a multiple of the moving dynamics loss.
    pub relabel_threshold: f64,
    pub max_grad_norm: Option<f64>,
}

impl AgentConfig {
    pub fn for_algo(algo: Algo) -> Self {
        let base = Self {
            algo,
            gamma: 0.99,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            tau_actor: 5e-3,
            tau_critic: 5e-3,
            explore_sigma: 0.1,
            batch_size: 128,
            policy_delay: 2,
            buffer_capacity: 100_000,
            hidden: 256,
            target_smoothing: false,
            smoothing_sigma: 0.2,
            smoothing_clip: 0.5,
            relabel_sigma: 0.1,
            relabel_redraws: 8,
            relabel_threshold: 4.0,
            max_grad_norm: None,
        };
        match algo {
            Algo::Td3 => base,
            Algo::Ddpg => Self {
                actor_lr: 1e-4,
                critic_lr: 1e-3,
                tau_actor: 1e-3,
                tau_critic: 5e-3,
                policy_delay: 1,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let positive = [
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("tau_actor", self.tau_actor),
            ("tau_critic", self.tau_critic),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(AgentError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.tau_actor > 1.0 || self.tau_critic > 1.0 {
            return Err(AgentError::Config("soft-update rates must lie in (0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(AgentError::Config(format!("gamma must lie in [0, 1), got {}", self.gamma)));
        }
        if !(self.explore_sigma >= 0.0) || !(self.relabel_sigma >= 0.0) {
            return Err(AgentError::Config("noise scales must be non-negative".into()));
        }
        if self.batch_size == 0 || self.policy_delay == 0 || self.buffer_capacity == 0 || self.hidden == 0 {
            return Err(AgentError::Config(
                "batch size, policy delay, buffer capacity and hidden width must be positive".into(),
            ));
        }
        if self.batch_size > self.buffer_capacity {
            return Err(AgentError::Config("batch size exceeds buffer capacity".into()));
        }
        Ok(())
    }
}

/// Policy output split into its discrete and continuous parts.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentAction {
    pub e: Vec<f64>,
    pub z: Vec<f64>,
}

impl LatentAction {
    pub fn split(latent: &[f64], d1: usize) -> Self {
        Self {
            e: latent[..d1].to_vec(),
            z: latent[d1..].to_vec(),
        }
    }

    pub fn concat(&self) -> Vec<f64> {
        let mut v = self.e.clone();
        v.extend_from_slice(&self.z);
        v
    }
}

/// Adds `N(0, sigma)` to each raw output and clips back into `[-1, 1]`.
pub(crate) fn perturb<R: Rng + ?Sized>(raw: &mut [f64], sigma: f64, rng: &mut R) {
    if sigma == 0.0 {
        return;
    }
    let noise = Normal::new(0.0, sigma).expect("finite non-negative sigma");
    for v in raw.iter_mut() {
        *v = (*v + noise.sample(rng)).clamp(-1.0, 1.0);
    }
}

/// Maps a latent action to an environment action: the nearest table row gives
/// `k`, and the decoder conditioned on that row (not on the raw `e`) gives the
/// parameters, truncated to action `k` and clipped to `[-1, 1]`.
pub fn decode_action(repr: &ReprModel, s: &[f64], latent: &LatentAction) -> Result<HybridAction, ReprError> {
    let k = repr.nn_decode(&latent.e);
    let row = repr.embed_lookup(k)?;
    let (recon, _) = repr.decode_and_predict(&latent.z, s, &row)?;
    let x = recon[..repr.spec().param_dims[k]]
        .iter()
        .map(|v| v.clamp(-1.0, 1.0))
        .collect();
    Ok(HybridAction::new(k, x))
}

/// Fraction of latents with every dimension strictly inside `bounds`.
pub fn bound_coverage<'a>(bounds: &LatentBounds, latents: impl IntoIterator<Item = &'a [f64]>) -> f64 {
    let (mut inside, mut total) = (0usize, 0usize);
    for l in latents {
        total += 1;
        inside += bounds.strictly_contains(l) as usize;
    }
    if total == 0 {
        0.0
    } else {
        inside as f64 / total as f64
    }
}
