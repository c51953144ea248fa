//! Half-field soccer: dribble with kick-to(x, y), then shoot past a keeper.
//!
//! The field is `[0, 20] × [-10, 10]` with the goal on `x = 20, |y| ≤ 3`. The
//! keeper is a segment of half-width 1.2 sliding along the goal line. While
//! the ball is dribbled the keeper heads for the point where the ball's
//! current heading would cross the goal line (goal centre if the ball is not
//! moving toward goal); during a shot it chases the shot's target.
//!
//! The hard variant splits the goal mouth into ten shooting regions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EnvError, EnvSpec, Environment, EpisodeClock, HybridAction, StepResult};

pub const FIELD_X: f64 = 20.0;
pub const FIELD_Y: f64 = 10.0;
pub const GOAL_HALF_WIDTH: f64 = 3.0;
pub const KEEPER_HALF_WIDTH: f64 = 1.2;
pub const KEEPER_SPEED: f64 = 0.6;
pub const DRIBBLE_SPEED: f64 = 3.0;
pub const SHOT_SPEED: f64 = 4.0;
pub const SHAPING_SCALE: f64 = 24.0;
pub const START: [f64; 2] = [8.0, 0.0];
pub const HORIZON: usize = 50;
pub const HARD_REGIONS: usize = 10;

const KICK_TO: usize = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Goal {
    spec: EnvSpec,
    hard: bool,
    clock: EpisodeClock,
    rng: ChaCha8Rng,
    agent: [f64; 2],
    ball: [f64; 2],
    ball_vel: [f64; 2],
    keeper_y: f64,
    keeper_vel: f64,
    possession: bool,
}

/// Distance from a point to the goal mouth segment.
fn distance_to_goal(p: [f64; 2]) -> f64 {
    let dy = (p[1].abs() - GOAL_HALF_WIDTH).max(0.0);
    (FIELD_X - p[0]).hypot(dy)
}

impl Goal {
    pub fn spec(hard: bool) -> EnvSpec {
        let mut dims = vec![2];
        dims.extend(std::iter::repeat_n(1, if hard { HARD_REGIONS } else { 2 }));
        EnvSpec::new(14, dims, HORIZON)
    }

    pub fn new(hard: bool) -> Self {
        let mut env = Self {
            spec: Self::spec(hard),
            hard,
            clock: EpisodeClock::default(),
            rng: ChaCha8Rng::seed_from_u64(0),
            agent: START,
            ball: START,
            ball_vel: [0.0; 2],
            keeper_y: 0.0,
            keeper_vel: 0.0,
            possession: true,
        };
        env.reset(0);
        env
    }

    pub fn ball(&self) -> [f64; 2] {
        self.ball
    }

    pub fn keeper_y(&self) -> f64 {
        self.keeper_y
    }

    /// Goal-line y coordinate targeted by shooting action `k ≥ 1`.
    pub fn shot_target(&self, k: usize, h: f64) -> f64 {
        let u = 0.5 * (h + 1.0);
        if self.hard {
            let i = (k - 1) as f64;
            -GOAL_HALF_WIDTH + 0.6 * i + 0.6 * u
        } else if k == 1 {
            -GOAL_HALF_WIDTH + GOAL_HALF_WIDTH * u
        } else {
            GOAL_HALF_WIDTH * u
        }
    }

    fn move_keeper_toward(&mut self, y: f64) {
        let target = y.clamp(-GOAL_HALF_WIDTH, GOAL_HALF_WIDTH);
        let delta = (target - self.keeper_y).clamp(-KEEPER_SPEED, KEEPER_SPEED);
        self.keeper_y += delta;
        self.keeper_vel = delta;
    }

    /// Where the ball's current heading meets the goal line.
    fn projected_crossing(&self) -> f64 {
        let [vx, vy] = self.ball_vel;
        if vx > 1e-12 {
            self.ball[1] + vy * (FIELD_X - self.ball[0]) / vx
        } else {
            0.0
        }
    }

    fn observe(&self) -> Vec<f64> {
        let [bx, by] = self.ball;
        vec![
            self.agent[0] / FIELD_X,
            self.agent[1] / FIELD_Y,
            bx / FIELD_X,
            by / FIELD_Y,
            self.ball_vel[0] / SHOT_SPEED,
            self.ball_vel[1] / SHOT_SPEED,
            self.keeper_y / GOAL_HALF_WIDTH,
            self.keeper_vel / KEEPER_SPEED,
            (FIELD_X - bx) / FIELD_X,
            -by / FIELD_Y,
            (FIELD_X - bx) / FIELD_X,
            (self.keeper_y - by) / (FIELD_Y + GOAL_HALF_WIDTH),
            self.possession as u8 as f64,
            (HORIZON - self.clock.t) as f64 / HORIZON as f64,
        ]
    }

    fn dribble(&mut self, x: &[f64]) -> (f64, bool) {
        let target = [0.5 * (x[0] + 1.0) * FIELD_X, x[1] * FIELD_Y];
        let d = [target[0] - self.ball[0], target[1] - self.ball[1]];
        let dist = d[0].hypot(d[1]);
        let step = dist.min(DRIBBLE_SPEED);
        self.ball_vel = if dist > 0.0 {
            [d[0] / dist * step, d[1] / dist * step]
        } else {
            [0.0, 0.0]
        };
        self.ball = [self.ball[0] + self.ball_vel[0], self.ball[1] + self.ball_vel[1]];
        self.agent = self.ball;
        let crossing = self.projected_crossing();
        self.move_keeper_toward(crossing);
        if self.ball[0] >= FIELD_X {
            // dribbled over the goal line: out of play
            return (0.0, true);
        }
        (-distance_to_goal(self.ball) / SHAPING_SCALE, false)
    }

    fn shoot(&mut self, target_y: f64) -> bool {
        let d = [FIELD_X - self.ball[0], target_y - self.ball[1]];
        let dist = d[0].hypot(d[1]);
        let substeps = (dist / SHOT_SPEED).ceil().max(1.0) as usize;
        self.ball_vel = [d[0] / dist * SHOT_SPEED, d[1] / dist * SHOT_SPEED];
        self.possession = false;
        for _ in 0..substeps {
            self.move_keeper_toward(target_y);
        }
        self.ball = [FIELD_X, target_y];
        (target_y - self.keeper_y).abs() > KEEPER_HALF_WIDTH
    }
}

impl Environment for Goal {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        // the dynamics are deterministic; the RNG is kept for a uniform reset contract
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.clock.restart();
        self.agent = START;
        self.ball = START;
        self.ball_vel = [0.0; 2];
        self.keeper_y = 0.0;
        self.keeper_vel = 0.0;
        self.possession = true;
        self.observe()
    }

    fn step(&mut self, action: &HybridAction) -> Result<StepResult, EnvError> {
        let x = self.clock.begin(&self.spec, action)?;
        let (reward, ended, success) = if action.k == KICK_TO {
            let (r, out) = self.dribble(&x);
            (r, out, false)
        } else {
            let target = self.shot_target(action.k, x[0]);
            let scored = self.shoot(target);
            (if scored { 1.0 } else { 0.0 }, true, scored)
        };
        let obs = self.observe();
        Ok(self.clock.finish(&self.spec, obs, reward, ended, success))
    }

    fn clamp_warnings(&self) -> u64 {
        self.clock.clamped
    }
}
