//! One-dimensional platform runner with patrolling enemies.
//!
//! Three platforms `[0, 10]`, `[11.5, 21]` and `[23.5, 30]` separated by gaps
//! of width 1.5 and 2.5. The goal is reaching position 30. Actions are
//! run/hop/leap, each with one parameter mapped to `p ∈ [0, 1]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EnvError, EnvSpec, Environment, EpisodeClock, HybridAction, StepResult};

pub const GOAL: f64 = 30.0;
pub const PLATFORMS: [(f64, f64); 3] = [(0.0, 10.0), (11.5, 21.0), (23.5, GOAL)];
pub const RUN_LENGTH: f64 = 2.0;
pub const HOP_LENGTH: f64 = 3.0;
pub const LEAP_LENGTH: f64 = 5.0;
pub const ENEMY_SPEED: f64 = 0.35;
pub const ENEMY_RADIUS: f64 = 0.5;
pub const PATROL_LENGTH: f64 = 4.0;
pub const HORIZON: usize = 20;

const RUN: usize = 0;
const HOP: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Platform {
    spec: EnvSpec,
    clock: EpisodeClock,
    rng: ChaCha8Rng,
    pos: f64,
    last_move: f64,
    enemy_pos: [f64; 3],
    enemy_dir: [f64; 3],
}

fn patrol_segment(i: usize) -> (f64, f64) {
    let (a, b) = PLATFORMS[i];
    let mid = 0.5 * (a + b);
    (mid - 0.5 * PATROL_LENGTH, mid + 0.5 * PATROL_LENGTH)
}

/// Platform index for a position on (or just past) a platform; positions
/// inside a gap map to the platform before it.
fn platform_index(pos: f64) -> usize {
    PLATFORMS.iter().rposition(|&(start, _)| pos >= start).unwrap_or(0)
}

fn on_ground(pos: f64) -> bool {
    pos >= GOAL || PLATFORMS.iter().any(|&(a, b)| pos >= a && pos <= b)
}

impl Platform {
    pub fn spec() -> EnvSpec {
        EnvSpec::new(9, vec![1, 1, 1], HORIZON)
    }

    pub fn new() -> Self {
        let mut env = Self {
            spec: Self::spec(),
            clock: EpisodeClock::default(),
            rng: ChaCha8Rng::seed_from_u64(0),
            pos: 0.0,
            last_move: 0.0,
            enemy_pos: [0.0; 3],
            enemy_dir: [1.0; 3],
        };
        env.reset(0);
        env
    }

    pub fn position(&self) -> f64 {
        self.pos
    }

    pub fn enemies(&self) -> ([f64; 3], [f64; 3]) {
        (self.enemy_pos, self.enemy_dir)
    }

    fn move_enemies(&mut self) {
        for i in 0..3 {
            let (lo, hi) = patrol_segment(i);
            let mut p = self.enemy_pos[i] + self.enemy_dir[i] * ENEMY_SPEED;
            if p > hi {
                p = 2.0 * hi - p;
                self.enemy_dir[i] = -1.0;
            } else if p < lo {
                p = 2.0 * lo - p;
                self.enemy_dir[i] = 1.0;
            }
            self.enemy_pos[i] = p;
        }
    }

    fn observe(&self) -> Vec<f64> {
        let plat = platform_index(self.pos);
        let rel_enemy = ((self.enemy_pos[plat] - self.pos) / 10.0).clamp(-1.0, 1.0);
        let (gap_dist, gap_width) = if plat < PLATFORMS.len() - 1 {
            let start = PLATFORMS[plat].1;
            let end = PLATFORMS[plat + 1].0;
            ((start - self.pos).max(0.0) / GOAL, (end - start) / 3.0)
        } else {
            (0.0, 0.0)
        };
        vec![
            (self.pos / GOAL).min(1.0),
            self.last_move / LEAP_LENGTH,
            rel_enemy,
            self.enemy_dir[plat],
            gap_dist,
            gap_width,
            ((GOAL - self.pos) / GOAL).max(0.0),
            plat as f64 / 2.0,
            (HORIZON - self.clock.t) as f64 / HORIZON as f64,
        ]
    }
}

impl Default for Platform {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for Platform {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.clock.restart();
        self.pos = 0.0;
        self.last_move = 0.0;
        for i in 0..3 {
            let (lo, hi) = patrol_segment(i);
            self.enemy_pos[i] = 0.5 * (lo + hi);
            self.enemy_dir[i] = if self.rng.random_bool(0.5) { 1.0 } else { -1.0 };
        }
        self.observe()
    }

    fn step(&mut self, action: &HybridAction) -> Result<StepResult, EnvError> {
        let x = self.clock.begin(&self.spec, action)?;
        let p = 0.5 * (x[0] + 1.0);
        self.move_enemies();

        let start = self.pos;
        let plat = platform_index(start);
        let mut dead = false;
        let target = match action.k {
            RUN => {
                let target = start + p * RUN_LENGTH;
                let edge = PLATFORMS[plat].1;
                if plat < PLATFORMS.len() - 1 && target > edge {
                    // ran off the edge into the gap
                    dead = true;
                    edge
                } else {
                    target
                }
            }
            k => {
                let len = if k == HOP { HOP_LENGTH } else { LEAP_LENGTH };
                let target = start + p * len;
                if !on_ground(target) {
                    dead = true;
                }
                target
            }
        };
        self.pos = target.min(GOAL);
        self.last_move = self.pos - start;

        let success = !dead && self.pos >= GOAL;
        if !dead && !success {
            let here = platform_index(self.pos);
            if (self.enemy_pos[here] - self.pos).abs() <= ENEMY_RADIUS {
                dead = true;
            }
        }
        let reward = (self.pos - start) / GOAL;
        let obs = self.observe();
        Ok(self.clock.finish(&self.spec, obs, reward, dead || success, success))
    }

    fn clamp_warnings(&self) -> u64 {
        self.clock.clamped
    }
}
