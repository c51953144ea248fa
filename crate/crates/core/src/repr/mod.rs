//! Hybrid action representation: a learnable embedding table for the discrete
//! part, a conditional VAE for the continuous parameters, a cascaded head that
//! predicts the state residual, and the central-range latent bounds the policy
//! is rescaled into.

mod bounds;
mod model;
mod table;
mod trainer;

use std::io::Write;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::numkit::NumError;

pub use bounds::{bounds_from_latents, latent_bounds, percentile, LatentBounds, MIN_BOUND_SAMPLES};
pub use model::{ParamGroup, ReprLoss, ReprModel};
pub use table::{nn_decode, repair_collisions, COLLISION_DISTANCE};
pub use trainer::{ReprTrainConfig, ReprTrainer, DYN_EMA_DECAY};

#[derive(Debug, thiserror::Error)]
pub enum ReprError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("discrete action {k} out of range for {num_actions} actions")]
    ActionOutOfRange { k: usize, num_actions: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Sizes of the representation networks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReprConfig {
    /// Width of the discrete-action embedding.
    pub d1: usize,
    /// Width of the continuous-parameter latent.
    pub d2: usize,
    pub hidden: usize,
}

impl Default for ReprConfig {
    fn default() -> Self {
        Self {
            d1: 6,
            d2: 6,
            hidden: 256,
        }
    }
}

/// Rows of `(s, k, x_k, s')` with `x_k` zero-padded to the widest action.
#[derive(Debug, Clone, PartialEq)]
pub struct ReprBatch {
    pub states: Array2<f64>,
    pub ks: Vec<usize>,
    pub params: Array2<f64>,
    pub next_states: Array2<f64>,
}

impl ReprBatch {
    pub fn new(
        states: Array2<f64>,
        ks: Vec<usize>,
        params: Array2<f64>,
        next_states: Array2<f64>,
    ) -> Result<Self, ReprError> {
        let n = ks.len();
        if n == 0 {
            return Err(ReprError::EmptyBatch);
        }
        if states.nrows() != n || params.nrows() != n || next_states.dim() != states.dim() {
            return Err(NumError::Shape(format!(
                "batch rows disagree: states {:?}, ks {n}, params {:?}, next {:?}",
                states.dim(),
                params.dim(),
                next_states.dim()
            ))
            .into());
        }
        Ok(Self {
            states,
            ks,
            params,
            next_states,
        })
    }

    pub fn len(&self) -> usize {
        self.ks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ks.is_empty()
    }

    pub fn residuals(&self) -> Array2<f64> {
        &self.next_states - &self.states
    }
}

/// Writes `(e…, z…, k, dyn_error)` rows for every sample of `batch`, using the
/// table row of the stored action and the encoder mean.
pub fn write_latents<W: Write>(model: &ReprModel, batch: &ReprBatch, mut out: W) -> Result<(), ReprError> {
    let e = model.embed_rows(&batch.ks)?;
    let (mu, _) = model.encode_batch(batch.states.view(), e.view(), batch.params.view(), &batch.ks)?;
    let (_, pred) = model.decode_batch(mu.view(), batch.states.view(), e.view())?;
    let dyn_err = squared_row_error(pred.view(), batch.residuals().view());

    let mut header: Vec<String> = (0..model.d1()).map(|i| format!("e{i}")).collect();
    header.extend((0..model.d2()).map(|i| format!("z{i}")));
    header.push("k".into());
    header.push("dyn_error".into());
    writeln!(out, "{}", header.join(","))?;
    for i in 0..batch.len() {
        let mut cells: Vec<String> = e.row(i).iter().map(|v| v.to_string()).collect();
        cells.extend(mu.row(i).iter().map(|v| v.to_string()));
        cells.push(batch.ks[i].to_string());
        cells.push(dyn_err[i].to_string());
        writeln!(out, "{}", cells.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// `‖a_i − b_i‖²` per row.
pub(crate) fn squared_row_error(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Vec<f64> {
    a.rows()
        .into_iter()
        .zip(b.rows())
        .map(|(x, y)| x.iter().zip(y.iter()).map(|(p, q)| (p - q) * (p - q)).sum())
        .collect()
}
