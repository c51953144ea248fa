use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EnvError, EnvSpec, Environment, EpisodeClock, HybridAction, StepResult};

pub const MOVE_DISTANCE: f64 = 0.1;
pub const CATCH_RADIUS: f64 = 0.1;
pub const CATCH_CHANCES: u32 = 10;
pub const MIN_TARGET_DISTANCE: f64 = 0.3;
pub const SUCCESS_BONUS: f64 = 10.0;
pub const HORIZON: usize = 20;

const MOVE: usize = 0;

/// Unit-square pursuit with a limited number of catch attempts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatchPoint {
    spec: EnvSpec,
    clock: EpisodeClock,
    rng: ChaCha8Rng,
    agent: [f64; 2],
    target: [f64; 2],
    chances: u32,
}

impl CatchPoint {
    pub fn spec() -> EnvSpec {
        // move(θ) takes one parameter, catch takes none
        EnvSpec::new(5, vec![1, 0], HORIZON)
    }

    pub fn new() -> Self {
        let mut env = Self {
            spec: Self::spec(),
            clock: EpisodeClock::default(),
            rng: ChaCha8Rng::seed_from_u64(0),
            agent: [0.5, 0.5],
            target: [0.5, 0.5],
            chances: CATCH_CHANCES,
        };
        env.reset(0);
        env
    }

    pub fn agent(&self) -> [f64; 2] {
        self.agent
    }

    pub fn target(&self) -> [f64; 2] {
        self.target
    }

    fn distance(&self) -> f64 {
        (self.agent[0] - self.target[0]).hypot(self.agent[1] - self.target[1])
    }

    fn observe(&self) -> Vec<f64> {
        vec![
            self.agent[0],
            self.agent[1],
            self.target[0],
            self.target[1],
            self.chances as f64 / CATCH_CHANCES as f64,
        ]
    }
}

impl Default for CatchPoint {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for CatchPoint {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.clock.restart();
        self.agent = [0.5, 0.5];
        self.chances = CATCH_CHANCES;
        loop {
            let t = [self.rng.random::<f64>(), self.rng.random::<f64>()];
            if (t[0] - 0.5).hypot(t[1] - 0.5) >= MIN_TARGET_DISTANCE {
                self.target = t;
                break;
            }
        }
        self.observe()
    }

    fn step(&mut self, action: &HybridAction) -> Result<StepResult, EnvError> {
        let x = self.clock.begin(&self.spec, action)?;
        let mut success = false;
        if action.k == MOVE {
            let theta = PI * x[0];
            self.agent[0] = (self.agent[0] + MOVE_DISTANCE * theta.cos()).clamp(0.0, 1.0);
            self.agent[1] = (self.agent[1] + MOVE_DISTANCE * theta.sin()).clamp(0.0, 1.0);
        } else {
            self.chances -= 1;
            success = self.distance() <= CATCH_RADIUS;
        }
        let mut reward = -self.distance();
        if success {
            reward += SUCCESS_BONUS;
        }
        let ended = success || self.chances == 0;
        let obs = self.observe();
        Ok(self.clock.finish(&self.spec, obs, reward, ended, success))
    }

    fn clamp_warnings(&self) -> u64 {
        self.clock.clamped
    }
}
