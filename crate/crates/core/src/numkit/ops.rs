use ndarray::{Array2, ArrayView2, Zip};

use super::{NumError, ParameterSet};

/// Polyak averaging: `target ← tau·source + (1 − tau)·target`.
pub fn soft_update(target: &mut ParameterSet, source: &ParameterSet, tau: f64) -> Result<(), NumError> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(NumError::Config(format!("tau must lie in (0, 1], got {tau}")));
    }
    target.check_same_layout(source)?;
    for idx in 0..target.len() {
        let s = source.get(idx);
        let t = target.get_mut(idx);
        if tau == 1.0 {
            t.assign(s);
        } else {
            Zip::from(t).and(s).for_each(|t, &s| *t = tau * s + (1.0 - tau) * *t);
        }
    }
    Ok(())
}

fn same_dims(a: &ArrayView2<'_, f64>, b: &ArrayView2<'_, f64>, what: &str) -> Result<(), NumError> {
    if a.dim() != b.dim() {
        return Err(NumError::Shape(format!("{what}: {:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

/// `z = mu + exp(log_std) ⊙ noise`, row per sample.
pub fn reparam_sample(
    mu: ArrayView2<'_, f64>,
    log_std: ArrayView2<'_, f64>,
    noise: ArrayView2<'_, f64>,
) -> Result<Array2<f64>, NumError> {
    same_dims(&mu, &log_std, "reparam mu/log_std")?;
    same_dims(&mu, &noise, "reparam mu/noise")?;
    let mut z = mu.to_owned();
    Zip::from(&mut z)
        .and(&log_std)
        .and(&noise)
        .for_each(|z, &ls, &n| *z += ls.exp() * n);
    Ok(z)
}

/// Gradients of [`reparam_sample`] given `dz`: returns `(d mu, d log_std)`.
pub fn reparam_backward(
    log_std: ArrayView2<'_, f64>,
    noise: ArrayView2<'_, f64>,
    dz: ArrayView2<'_, f64>,
) -> (Array2<f64>, Array2<f64>) {
    let mut dls = dz.to_owned();
    Zip::from(&mut dls)
        .and(&log_std)
        .and(&noise)
        .for_each(|g, &ls, &n| *g *= ls.exp() * n);
    (dz.to_owned(), dls)
}

/// Closed-form `KL(N(mu, exp(2·log_std)) ‖ N(0, I))` for one sample.
pub fn kl_std_normal(mu: &[f64], log_std: &[f64]) -> Result<f64, NumError> {
    if mu.len() != log_std.len() {
        return Err(NumError::Shape(format!(
            "kl: mu has {} dims, log_std {}",
            mu.len(),
            log_std.len()
        )));
    }
    Ok(0.5
        * mu.iter()
            .zip(log_std)
            .map(|(&m, &ls)| (2.0 * ls).exp() + m * m - 1.0 - 2.0 * ls)
            .sum::<f64>())
}

/// Per-row KL values plus the gradient of their sum w.r.t. `(mu, log_std)`.
pub fn kl_std_normal_rows(mu: ArrayView2<'_, f64>, log_std: ArrayView2<'_, f64>) -> (Vec<f64>, Array2<f64>, Array2<f64>) {
    let kl = mu
        .rows()
        .into_iter()
        .zip(log_std.rows())
        .map(|(m, ls)| {
            0.5 * m
                .iter()
                .zip(ls.iter())
                .map(|(&m, &ls)| (2.0 * ls).exp() + m * m - 1.0 - 2.0 * ls)
                .sum::<f64>()
        })
        .collect();
    let dmu = mu.to_owned();
    let dls = log_std.mapv(|ls| (2.0 * ls).exp() - 1.0);
    (kl, dmu, dls)
}
