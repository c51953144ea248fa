//! Point agent driven by `n` equally spaced actuators.
//!
//! Discrete action `k ∈ [0, 2ⁿ)` is the on/off bitmask of the actuators and
//! the `n` parameters scale each actuator's push. The action set grows
//! exponentially with `n` while the parameter vector stays `n`-dimensional.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EnvError, EnvSpec, Environment, EpisodeClock, HybridAction, StepResult};

pub const STEP_SCALE: f64 = 0.05;
pub const TARGET_RADIUS: (f64, f64) = (0.4, 0.9);
pub const SUCCESS_RADIUS: f64 = 0.1;
pub const SUCCESS_BONUS: f64 = 10.0;
pub const HORIZON: usize = 25;
pub const MAX_ACTUATORS: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardMove {
    spec: EnvSpec,
    n: usize,
    clock: EpisodeClock,
    rng: ChaCha8Rng,
    pos: [f64; 2],
    target: [f64; 2],
}

/// `Σ_{i: bit i of mask set} x_i·m·(cos φ_i, sin φ_i)` with `φ_i = 2πi/n`.
pub fn hard_move_displacement(n: usize, mask: usize, x: &[f64]) -> [f64; 2] {
    let mut d = [0.0, 0.0];
    let mut bits = mask;
    while bits != 0 {
        let i = bits.trailing_zeros() as usize;
        bits &= bits - 1;
        let phi = 2.0 * PI * i as f64 / n as f64;
        d[0] += x[i] * STEP_SCALE * phi.cos();
        d[1] += x[i] * STEP_SCALE * phi.sin();
    }
    d
}

impl HardMove {
    pub fn spec(n: usize) -> Result<EnvSpec, EnvError> {
        if n == 0 || n > MAX_ACTUATORS {
            return Err(EnvError::Config(format!(
                "hard_move needs 1 ≤ n ≤ {MAX_ACTUATORS} actuators, got {n}"
            )));
        }
        Ok(EnvSpec::new(4, vec![n; 1 << n], HORIZON))
    }

    pub fn new(n: usize) -> Result<Self, EnvError> {
        let mut env = Self {
            spec: Self::spec(n)?,
            n,
            clock: EpisodeClock::default(),
            rng: ChaCha8Rng::seed_from_u64(0),
            pos: [0.0; 2],
            target: [0.0; 2],
        };
        env.reset(0);
        Ok(env)
    }

    pub fn position(&self) -> [f64; 2] {
        self.pos
    }

    pub fn target(&self) -> [f64; 2] {
        self.target
    }

    fn distance(&self) -> f64 {
        (self.pos[0] - self.target[0]).hypot(self.pos[1] - self.target[1])
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.pos[0], self.pos[1], self.target[0], self.target[1]]
    }
}

impl Environment for HardMove {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.clock.restart();
        self.pos = [0.0; 2];
        // uniform over the annulus area
        let (r0, r1) = TARGET_RADIUS;
        let r = self.rng.random_range(r0 * r0..r1 * r1).sqrt();
        let angle = self.rng.random_range(0.0..2.0 * PI);
        self.target = [r * angle.cos(), r * angle.sin()];
        self.observe()
    }

    fn step(&mut self, action: &HybridAction) -> Result<StepResult, EnvError> {
        let x = self.clock.begin(&self.spec, action)?;
        let d = hard_move_displacement(self.n, action.k, &x);
        self.pos[0] = (self.pos[0] + d[0]).clamp(-1.0, 1.0);
        self.pos[1] = (self.pos[1] + d[1]).clamp(-1.0, 1.0);
        let dist = self.distance();
        let success = dist <= SUCCESS_RADIUS;
        let reward = -dist + if success { SUCCESS_BONUS } else { 0.0 };
        let obs = self.observe();
        Ok(self.clock.finish(&self.spec, obs, reward, success, success))
    }

    fn clamp_warnings(&self) -> u64 {
        self.clock.clamped
    }
}
