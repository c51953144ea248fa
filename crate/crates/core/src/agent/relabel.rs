use ndarray::{s, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::repr::{LatentBounds, ReprModel};

use super::{AgentBatch, AgentConfig, AgentError};

/// Running counts of what relabeling changed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelabelStats {
    /// Transitions passed through relabeling.
    pub checked: u64,
    /// Discrete parts replaced because they decoded to another action.
    pub discrete: u64,
    /// Discrete replacements that fell back to the exact table row.
    pub exact_fallbacks: u64,
    /// Continuous parts resampled because their predicted dynamics drifted.
    pub continuous: u64,
    /// Latents left outside the current bounds (clamping would change the
    /// decoded action).
    pub out_of_bounds: u64,
}

/// Corrects a sampled batch copy for representation drift.
///
/// Discrete part: when the stored `e` no longer decodes to the stored `k`, it
/// becomes the table row of `k` plus `N(0, σ)` noise, redrawn until it decodes
/// to `k` (the exact row after too many misses). Continuous part: when the
/// decoder's predicted residual under `(z, s, e_k)` misses the observed one by
/// more than `threshold · moving_dyn_loss` in squared norm, `z` is resampled
/// from the encoder. Finally latents are clamped into `bounds`, except for a
/// discrete part whose clamped value would decode to a different action.
pub fn relabel_batch<R: Rng + ?Sized>(
    repr: &ReprModel,
    batch: &mut AgentBatch,
    moving_dyn_loss: f64,
    bounds: Option<&LatentBounds>,
    config: &AgentConfig,
    rng: &mut R,
    stats: &mut RelabelStats,
) -> Result<(), AgentError> {
    let d1 = repr.d1();
    let n = batch.len();
    let e_rows = repr.embed_rows(&batch.ks)?;
    let noise = Normal::new(0.0, config.relabel_sigma).map_err(|e| AgentError::Config(e.to_string()))?;

    for i in 0..n {
        let k = batch.ks[i];
        let e = batch.latents.slice(s![i, ..d1]).to_vec();
        if repr.nn_decode(&e) == k {
            continue;
        }
        stats.discrete += 1;
        let row = e_rows.row(i);
        let mut chosen = None;
        for _ in 0..config.relabel_redraws {
            let cand: Vec<f64> = row.iter().map(|&v| v + noise.sample(rng)).collect();
            if repr.nn_decode(&cand) == k {
                chosen = Some(cand);
                break;
            }
        }
        let new_e = chosen.unwrap_or_else(|| {
            stats.exact_fallbacks += 1;
            row.to_vec()
        });
        batch.latents.slice_mut(s![i, ..d1]).assign(&ndarray::ArrayView1::from(&new_e));
    }

    let threshold = config.relabel_threshold * moving_dyn_loss;
    let z = batch.latents.slice(s![.., d1..]).to_owned();
    let (_, pred) = repr.decode_batch(z.view(), batch.states.view(), e_rows.view())?;
    let residual = &batch.next_states - &batch.states;
    let drifted: Vec<usize> = (0..n)
        .filter(|&i| {
            let err: f64 = pred
                .row(i)
                .iter()
                .zip(residual.row(i).iter())
                .map(|(p, r)| (p - r) * (p - r))
                .sum();
            err > threshold
        })
        .collect();
    if !drifted.is_empty() {
        let pick = |m: &Array2<f64>| m.select(ndarray::Axis(0), &drifted);
        let ks: Vec<usize> = drifted.iter().map(|&i| batch.ks[i]).collect();
        let (mu, log_std) = repr.encode_batch(
            pick(&batch.states).view(),
            pick(&e_rows).view(),
            pick(&batch.params).view(),
            &ks,
        )?;
        for (r, &i) in drifted.iter().enumerate() {
            for j in 0..repr.d2() {
                let eps: f64 = rng.sample(StandardNormal);
                batch.latents[[i, d1 + j]] = mu[[r, j]] + log_std[[r, j]].exp() * eps;
            }
        }
        stats.continuous += drifted.len() as u64;
    }

    if let Some(b) = bounds {
        for i in 0..n {
            let mut lat = batch.latents.row(i).to_vec();
            let (mut e, mut z) = (lat[..d1].to_vec(), lat[d1..].to_vec());
            let e_bounds = LatentBounds {
                lower: b.lower[..d1].to_vec(),
                upper: b.upper[..d1].to_vec(),
                c: b.c,
            };
            let z_bounds = LatentBounds {
                lower: b.lower[d1..].to_vec(),
                upper: b.upper[d1..].to_vec(),
                c: b.c,
            };
            z_bounds.clamp(&mut z);
            if !e_bounds.contains(&e) {
                let mut clamped = e.clone();
                e_bounds.clamp(&mut clamped);
                if repr.nn_decode(&clamped) == batch.ks[i] {
                    e = clamped;
                } else {
                    stats.out_of_bounds += 1;
                }
            }
            lat[..d1].copy_from_slice(&e);
            lat[d1..].copy_from_slice(&z);
            batch.latents.row_mut(i).assign(&ndarray::ArrayView1::from(&lat));
        }
    }
    stats.checked += n as u64;
    Ok(())
}
