//! Central-difference gradient checker.
//!
//! The loss closure returns an [`Evaluation`]: the scalar loss plus an
//! activation-pattern signature. When a ±h probe changes the signature the
//! stencil straddles a ReLU kink, the central difference is not a derivative
//! there, and the coordinate is counted as skipped instead of compared.
//!
//! The central difference carries a rounding error of roughly
//! `ε·|L| / h`. That bound is subtracted from the absolute error before the
//! relative error is formed, so coordinates whose gradient is below the
//! resolution of the stencil are not reported as mismatches. The raw figure
//! is kept alongside.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{NumError, ParameterSet};

/// Denominator floor for the relative error.
pub const REL_ERR_FLOOR: f64 = 1e-6;
/// Safety factor on the `ε·|L| / h` rounding bound.
pub const ROUNDOFF_FACTOR: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub signature: u64,
}

impl From<f64> for Evaluation {
    fn from(loss: f64) -> Self {
        Self { loss, signature: 0 }
    }
}

/// Which coordinates to probe.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckPlan {
    /// Entry indices to probe; `None` means every entry.
    pub entries: Option<Vec<usize>>,
    /// At most this many coordinates per entry (sampled without replacement).
    pub max_per_entry: Option<usize>,
    pub seed: u64,
}

impl CheckPlan {
    pub fn all() -> Self {
        Self {
            entries: None,
            max_per_entry: None,
            seed: 0,
        }
    }

    pub fn sampled(max_per_entry: usize, seed: u64) -> Self {
        Self {
            entries: None,
            max_per_entry: Some(max_per_entry),
            seed,
        }
    }

    pub fn only(mut self, entries: Vec<usize>) -> Self {
        self.entries = Some(entries);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest relative error after discounting the rounding bound.
    pub max_rel_error: f64,
    /// Largest relative error without the discount.
    pub max_raw_rel_error: f64,
    pub worst_entry: String,
    pub worst_index: usize,
    pub checked: usize,
    pub skipped_kinks: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tol
    }
}

/// `|a − n| / max(|a|, |n|, REL_ERR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    relative_error_above(analytic, numeric, 0.0)
}

/// `max(|a − n| − noise, 0) / max(|a|, |n|, REL_ERR_FLOOR)`.
pub fn relative_error_above(analytic: f64, numeric: f64, noise: f64) -> f64 {
    ((analytic - numeric).abs() - noise).max(0.0) / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares `analytic` against central differences of `loss_fn` around `params`.
pub fn finite_diff_check<F>(
    params: &ParameterSet,
    analytic: &ParameterSet,
    h: f64,
    plan: &CheckPlan,
    mut loss_fn: F,
) -> Result<GradCheckReport, NumError>
where
    F: FnMut(&ParameterSet) -> Evaluation,
{
    params.check_same_layout(analytic)?;
    let mut probe = params.clone();
    let base_sig = loss_fn(&probe).signature;
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);

    let entries: Vec<usize> = match &plan.entries {
        Some(e) => e.clone(),
        None => (0..params.len()).collect(),
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_raw_rel_error: 0.0,
        worst_entry: String::new(),
        worst_index: 0,
        checked: 0,
        skipped_kinks: 0,
    };

    for idx in entries {
        let n = params.get(idx).len();
        let coords: Vec<usize> = match plan.max_per_entry {
            Some(m) if m < n => {
                let mut c = sample(&mut rng, n, m).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        for c in coords {
            let orig = params.get(idx).as_slice().expect("contiguous entry")[c];
            let set = |p: &mut ParameterSet, v: f64| {
                p.get_mut(idx).as_slice_mut().expect("contiguous entry")[c] = v;
            };
            set(&mut probe, orig + h);
            let plus = loss_fn(&probe);
            set(&mut probe, orig - h);
            let minus = loss_fn(&probe);
            set(&mut probe, orig);
            if plus.signature != base_sig || minus.signature != base_sig {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (plus.loss - minus.loss) / (2.0 * h);
            let a = analytic.get(idx).as_slice().expect("contiguous entry")[c];
            let noise = ROUNDOFF_FACTOR * f64::EPSILON * plus.loss.abs().max(minus.loss.abs()) / h;
            let err = relative_error_above(a, numeric, noise);
            let raw = relative_error(a, numeric);
            report.max_raw_rel_error = report.max_raw_rel_error.max(if raw.is_finite() { raw } else { f64::INFINITY });
            report.checked += 1;
            if err > report.max_rel_error || !err.is_finite() {
                report.max_rel_error = if err.is_finite() { err } else { f64::INFINITY };
                report.worst_entry = params.entry(idx).name.clone();
                report.worst_index = c;
            }
        }
    }
    Ok(report)
}
