use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{EnvError, EnvSpec, Environment, EpisodeClock, HybridAction, StepResult};

pub const STATE_DIM: usize = 4;
pub const PARAM_DIMS: [usize; 4] = [2, 1, 3, 2];
/// Seed of the fixed effect matrices.
pub const MATRIX_SEED: u64 = 0x11AE;

/// Single-step episodes with `s ~ U(-1, 1)^4` and `s' = s + A_k x_k`.
///
/// The `A_k` are fixed random `4 × |X_k|` matrices with orthonormal columns,
/// so the state residual is an exact, norm-preserving linear function of the
/// hybrid action. Used to check that the representation model learns
/// dynamics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticLinear {
    spec: EnvSpec,
    clock: EpisodeClock,
    rng: ChaCha8Rng,
    #[serde(skip, default = "SyntheticLinear::effect_matrices")]
    effects: Vec<Array2<f64>>,
    state: Vec<f64>,
}

impl SyntheticLinear {
    pub fn spec() -> EnvSpec {
        EnvSpec::new(STATE_DIM, PARAM_DIMS.to_vec(), 1)
    }

    pub fn effect_matrices() -> Vec<Array2<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(MATRIX_SEED);
        PARAM_DIMS
            .iter()
            .map(|&d| {
                let mut a: Array2<f64> = Array2::from_shape_fn((STATE_DIM, d), |_| rng.sample(StandardNormal));
                // Gram-Schmidt on Gaussian columns
                for j in 0..d {
                    for i in 0..j {
                        let dot = a.column(i).dot(&a.column(j));
                        let prev = a.column(i).to_owned();
                        a.column_mut(j).scaled_add(-dot, &prev);
                    }
                    let norm = a.column(j).dot(&a.column(j)).sqrt();
                    a.column_mut(j).mapv_inplace(|v| v / norm);
                }
                a
            })
            .collect()
    }

    pub fn new() -> Self {
        let mut env = Self {
            spec: Self::spec(),
            clock: EpisodeClock::default(),
            rng: ChaCha8Rng::seed_from_u64(0),
            effects: Self::effect_matrices(),
            state: vec![0.0; STATE_DIM],
        };
        env.reset(0);
        env
    }
}

impl Default for SyntheticLinear {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for SyntheticLinear {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.clock.restart();
        self.state = (0..STATE_DIM).map(|_| self.rng.random_range(-1.0..1.0)).collect();
        self.state.clone()
    }

    fn step(&mut self, action: &HybridAction) -> Result<StepResult, EnvError> {
        let x = self.clock.begin(&self.spec, action)?;
        let a = &self.effects[action.k];
        for (i, s) in self.state.iter_mut().enumerate() {
            *s += (0..x.len()).map(|j| a[[i, j]] * x[j]).sum::<f64>();
        }
        let obs = self.state.clone();
        Ok(self.clock.finish(&self.spec, obs, 0.0, false, false))
    }

    fn clamp_warnings(&self) -> u64 {
        self.clock.clamped
    }
}
