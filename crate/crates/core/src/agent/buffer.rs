use ndarray::{Array1, Array2, ArrayD, IxDyn};
use rand::Rng;

use crate::numkit::{Checkpoint, NumError};
use crate::repr::ReprBatch;

use super::AgentError;

/// One replay record; `x` is zero-padded and `latent` is `[e, z]` as executed.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub k: usize,
    pub x: Vec<f64>,
    pub latent: Vec<f64>,
    pub r: f64,
    pub s_next: Vec<f64>,
    pub done: bool,
}

/// Sampled transitions laid out as row-per-sample matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentBatch {
    pub states: Array2<f64>,
    pub ks: Vec<usize>,
    pub params: Array2<f64>,
    pub latents: Array2<f64>,
    pub rewards: Vec<f64>,
    pub next_states: Array2<f64>,
    pub dones: Vec<bool>,
}

impl AgentBatch {
    pub fn len(&self) -> usize {
        self.ks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ks.is_empty()
    }
}

/// Fixed-capacity ring of transitions; the oldest record is overwritten first.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    state_dim: usize,
    param_dim: usize,
    latent_dim: usize,
    cursor: usize,
    len: usize,
    states: Vec<f64>,
    ks: Vec<usize>,
    params: Vec<f64>,
    latents: Vec<f64>,
    rewards: Vec<f64>,
    next_states: Vec<f64>,
    dones: Vec<bool>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, state_dim: usize, param_dim: usize, latent_dim: usize) -> Result<Self, AgentError> {
        if capacity == 0 {
            return Err(AgentError::Config("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            state_dim,
            param_dim,
            latent_dim,
            cursor: 0,
            len: 0,
            states: Vec::new(),
            ks: Vec::new(),
            params: Vec::new(),
            latents: Vec::new(),
            rewards: Vec::new(),
            next_states: Vec::new(),
            dones: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: &Transition) -> Result<(), AgentError> {
        if t.s.len() != self.state_dim
            || t.s_next.len() != self.state_dim
            || t.x.len() != self.param_dim
            || t.latent.len() != self.latent_dim
        {
            return Err(NumError::Shape(format!(
                "transition dims (s {}, x {}, latent {}, s' {}) do not match buffer ({}, {}, {})",
                t.s.len(),
                t.x.len(),
                t.latent.len(),
                t.s_next.len(),
                self.state_dim,
                self.param_dim,
                self.latent_dim
            ))
            .into());
        }
        let i = self.cursor;
        if self.len < self.capacity {
            self.states.extend_from_slice(&t.s);
            self.ks.push(t.k);
            self.params.extend_from_slice(&t.x);
            self.latents.extend_from_slice(&t.latent);
            self.rewards.push(t.r);
            self.next_states.extend_from_slice(&t.s_next);
            self.dones.push(t.done);
            self.len += 1;
        } else {
            let (sd, pd, ld) = (self.state_dim, self.param_dim, self.latent_dim);
            self.states[i * sd..(i + 1) * sd].copy_from_slice(&t.s);
            self.ks[i] = t.k;
            self.params[i * pd..(i + 1) * pd].copy_from_slice(&t.x);
            self.latents[i * ld..(i + 1) * ld].copy_from_slice(&t.latent);
            self.rewards[i] = t.r;
            self.next_states[i * sd..(i + 1) * sd].copy_from_slice(&t.s_next);
            self.dones[i] = t.done;
        }
        self.cursor = (i + 1) % self.capacity;
        Ok(())
    }

    pub fn get(&self, i: usize) -> Transition {
        let (sd, pd, ld) = (self.state_dim, self.param_dim, self.latent_dim);
        Transition {
            s: self.states[i * sd..(i + 1) * sd].to_vec(),
            k: self.ks[i],
            x: self.params[i * pd..(i + 1) * pd].to_vec(),
            latent: self.latents[i * ld..(i + 1) * ld].to_vec(),
            r: self.rewards[i],
            s_next: self.next_states[i * sd..(i + 1) * sd].to_vec(),
            done: self.dones[i],
        }
    }

    /// Overwrites the stored latent of record `i`.
    pub fn set_latent(&mut self, i: usize, latent: &[f64]) -> Result<(), AgentError> {
        let ld = self.latent_dim;
        if i >= self.len || latent.len() != ld {
            return Err(NumError::Shape(format!(
                "set_latent({i}) with {} values on a buffer of {} records and latent width {ld}",
                latent.len(),
                self.len
            ))
            .into());
        }
        self.latents[i * ld..(i + 1) * ld].copy_from_slice(latent);
        Ok(())
    }

    /// `n` storage indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<usize>, AgentError> {
        if self.len == 0 || self.len < n {
            return Err(AgentError::BufferTooSmall { have: self.len, need: n });
        }
        Ok((0..n).map(|_| rng.random_range(0..self.len)).collect())
    }

    fn rows(&self, data: &[f64], width: usize, idx: &[usize]) -> Array2<f64> {
        let mut out = Array2::zeros((idx.len(), width));
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r)
                .assign(&ndarray::ArrayView1::from(&data[i * width..(i + 1) * width]));
        }
        out
    }

    pub fn gather(&self, idx: &[usize]) -> AgentBatch {
        AgentBatch {
            states: self.rows(&self.states, self.state_dim, idx),
            ks: idx.iter().map(|&i| self.ks[i]).collect(),
            params: self.rows(&self.params, self.param_dim, idx),
            latents: self.rows(&self.latents, self.latent_dim, idx),
            rewards: idx.iter().map(|&i| self.rewards[i]).collect(),
            next_states: self.rows(&self.next_states, self.state_dim, idx),
            dones: idx.iter().map(|&i| self.dones[i]).collect(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<AgentBatch, AgentError> {
        let idx = self.sample_indices(n, rng)?;
        Ok(self.gather(&idx))
    }

    pub fn repr_batch(&self, idx: &[usize]) -> Result<ReprBatch, AgentError> {
        Ok(ReprBatch::new(
            self.rows(&self.states, self.state_dim, idx),
            idx.iter().map(|&i| self.ks[i]).collect(),
            self.rows(&self.params, self.param_dim, idx),
            self.rows(&self.next_states, self.state_dim, idx),
        )?)
    }

    /// Every stored transition in storage order, as a representation batch.
    pub fn all_repr(&self) -> Result<ReprBatch, AgentError> {
        let idx: Vec<usize> = (0..self.len).collect();
        self.repr_batch(&idx)
    }

    pub fn save_into(&self, ckpt: &mut Checkpoint, prefix: &str) {
        let n = self.len;
        let mat = |data: &[f64], w: usize| ArrayD::from_shape_vec(IxDyn(&[n, w]), data.to_vec()).unwrap();
        ckpt.push_tensor(format!("{prefix}.states"), mat(&self.states, self.state_dim));
        ckpt.push_tensor(format!("{prefix}.params"), mat(&self.params, self.param_dim));
        ckpt.push_tensor(format!("{prefix}.latents"), mat(&self.latents, self.latent_dim));
        ckpt.push_tensor(format!("{prefix}.next_states"), mat(&self.next_states, self.state_dim));
        ckpt.push_tensor(
            format!("{prefix}.ks"),
            Array1::from_iter(self.ks.iter().map(|&k| k as f64)).into_dyn(),
        );
        ckpt.push_tensor(format!("{prefix}.rewards"), Array1::from(self.rewards.clone()).into_dyn());
        ckpt.push_tensor(
            format!("{prefix}.dones"),
            Array1::from_iter(self.dones.iter().map(|&d| d as u8 as f64)).into_dyn(),
        );
        ckpt.set_meta(
            format!("{prefix}.layout"),
            format!(
                "{} {} {} {} {} {}",
                self.capacity, self.state_dim, self.param_dim, self.latent_dim, self.cursor, self.len
            ),
        );
    }

    pub fn load_from(ckpt: &Checkpoint, prefix: &str) -> Result<Self, AgentError> {
        let layout: Vec<usize> = ckpt
            .meta(&format!("{prefix}.layout"))?
            .split_whitespace()
            .map(|v| v.parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|e| NumError::Format(format!("buffer layout: {e}")))?;
        let [capacity, state_dim, param_dim, latent_dim, cursor, len] = layout[..] else {
            return Err(NumError::Format("buffer layout needs six fields".into()).into());
        };
        let flat = |name: &str, width: usize| -> Result<Vec<f64>, AgentError> {
            let t = ckpt.tensor(&format!("{prefix}.{name}"))?;
            if t.len() != len * width {
                return Err(NumError::Format(format!("buffer tensor {name} has {} values, expected {}", t.len(), len * width)).into());
            }
            Ok(t.iter().copied().collect())
        };
        let mut buf = Self::new(capacity, state_dim, param_dim, latent_dim)?;
        buf.states = flat("states", state_dim)?;
        buf.params = flat("params", param_dim)?;
        buf.latents = flat("latents", latent_dim)?;
        buf.next_states = flat("next_states", state_dim)?;
        buf.ks = flat("ks", 1)?.into_iter().map(|k| k as usize).collect();
        buf.rewards = flat("rewards", 1)?;
        buf.dones = flat("dones", 1)?.into_iter().map(|d| d != 0.0).collect();
        buf.cursor = cursor;
        buf.len = len;
        Ok(buf)
    }
}
