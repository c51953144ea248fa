use ndarray::{ArrayView2, ArrayViewMut2};
use rand::Rng;

/// Rows closer than this are treated as colliding.
pub const COLLISION_DISTANCE: f64 = 1e-6;
const REPAIR_NOISE: f64 = 0.01;

/// Index of the nearest table row to `e`; ties go to the smallest index.
pub fn nn_decode(table: ArrayView2<'_, f64>, e: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, row) in table.rows().into_iter().enumerate() {
        let d: f64 = row.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    best
}

/// Perturbs rows that sit within [`COLLISION_DISTANCE`] of an earlier row with
/// `U(-0.01, 0.01)` noise until all rows are pairwise distinct. Returns the
/// number of perturbations applied.
pub fn repair_collisions<R: Rng + ?Sized>(mut table: ArrayViewMut2<'_, f64>, rng: &mut R) -> usize {
    let mut repairs = 0;
    let k = table.nrows();
    let mut j = 1;
    while j < k {
        let collides = (0..j).any(|i| {
            let d2: f64 = table
                .row(i)
                .iter()
                .zip(table.row(j).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d2.sqrt() < COLLISION_DISTANCE
        });
        if collides {
            for v in table.row_mut(j).iter_mut() {
                *v += rng.random_range(-REPAIR_NOISE..REPAIR_NOISE);
            }
            repairs += 1;
        } else {
            j += 1;
        }
    }
    repairs
}
