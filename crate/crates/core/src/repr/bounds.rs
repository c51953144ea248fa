use ndarray::{concatenate, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{ReprBatch, ReprError, ReprModel};

/// Fewest samples accepted by [`latent_bounds`].
pub const MIN_BOUND_SAMPLES: usize = 100;

/// Per-dimension box the policy output is rescaled into.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Central percentage the box was computed from.
    pub c: f64,
}

impl LatentBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, c: f64) -> Result<Self, ReprError> {
        if lower.len() != upper.len() || lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(ReprError::Config(format!("invalid bounds: lower {lower:?}, upper {upper:?}")));
        }
        Ok(Self { lower, upper, c })
    }

    /// The box `[-1, 1]^dim`, under which rescaling is the identity.
    pub fn unit(dim: usize) -> Self {
        Self {
            lower: vec![-1.0; dim],
            upper: vec![1.0; dim],
            c: 100.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Maps `raw ∈ [-1, 1]` affinely onto `[lower, upper]` per dimension.
    pub fn rescale(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&r, (&l, &u))| l + 0.5 * (r + 1.0) * (u - l))
            .collect()
    }

    /// Derivative of [`rescale`](Self::rescale) per dimension.
    pub fn half_widths(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (u - l)).collect()
    }

    pub fn strictly_contains(&self, v: &[f64]) -> bool {
        v.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(&x, (&l, &u))| l < x && x < u)
    }

    pub fn contains(&self, v: &[f64]) -> bool {
        v.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(&x, (&l, &u))| l <= x && x <= u)
    }

    pub fn clamp(&self, v: &mut [f64]) {
        for (x, (&l, &u)) in v.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *x = x.clamp(l, u);
        }
    }
}

/// Percentile `p ∈ [0, 100]` of ascending `sorted`, interpolating linearly
/// between order statistics at position `p/100 · (n − 1)`.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Central `c`-percent range of each column of `latents`.
pub fn bounds_from_latents(latents: ArrayView2<'_, f64>, c: f64) -> Result<LatentBounds, ReprError> {
    if !(c > 0.0 && c <= 100.0) {
        return Err(ReprError::Config(format!("central range percentage must lie in (0, 100], got {c}")));
    }
    if latents.nrows() == 0 {
        return Err(ReprError::EmptyBatch);
    }
    let tail = 0.5 * (100.0 - c);
    let mut lower = Vec::with_capacity(latents.ncols());
    let mut upper = Vec::with_capacity(latents.ncols());
    for col in latents.columns() {
        let mut v = col.to_vec();
        v.sort_by(f64::total_cmp);
        lower.push(percentile(&v, tail));
        upper.push(percentile(&v, 100.0 - tail));
    }
    LatentBounds::new(lower, upper, c)
}

/// Bounds over `[table row of k, encoder mean]` of every sample.
pub fn latent_bounds(model: &ReprModel, samples: &ReprBatch, c: f64) -> Result<LatentBounds, ReprError> {
    if samples.len() < MIN_BOUND_SAMPLES {
        return Err(ReprError::Config(format!(
            "latent bounds need at least {MIN_BOUND_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    let e = model.embed_rows(&samples.ks)?;
    let (mu, _) = model.encode_batch(samples.states.view(), e.view(), samples.params.view(), &samples.ks)?;
    let latents = concatenate![Axis(1), e, mu];
    bounds_from_latents(latents.view(), c)
}
