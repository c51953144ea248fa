//! Parameterized-action benchmark environments.
//!
//! Every environment takes a [`HybridAction`]: a discrete index `k` plus the
//! continuous parameters of action `k`, each presented in `[-1, 1]`. Episodes
//! are deterministic given the reset seed and the action sequence.

mod catch_point;
mod goal;
mod hard_move;
mod linear;
mod platform;

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use catch_point::CatchPoint;
pub use goal::Goal;
pub use hard_move::{hard_move_displacement, HardMove};
pub use linear::SyntheticLinear;
pub use platform::Platform;

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("step called after the episode finished; reset first")]
    EpisodeDone,
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvId {
    Platform,
    Goal,
    HardGoal,
    CatchPoint,
    HardMove,
    /// Diagnostic environment with linear dynamics `s' = s + A_k x_k`.
    Linear,
}

impl EnvId {
    pub const BENCHMARKS: [EnvId; 5] = [
        EnvId::Platform,
        EnvId::Goal,
        EnvId::HardGoal,
        EnvId::CatchPoint,
        EnvId::HardMove,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EnvId::Platform => "platform",
            EnvId::Goal => "goal",
            EnvId::HardGoal => "hard_goal",
            EnvId::CatchPoint => "catch_point",
            EnvId::HardMove => "hard_move",
            EnvId::Linear => "linear",
        }
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvId {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "platform" => EnvId::Platform,
            "goal" => EnvId::Goal,
            "hard_goal" => EnvId::HardGoal,
            "catch_point" => EnvId::CatchPoint,
            "hard_move" => EnvId::HardMove,
            "linear" => EnvId::Linear,
            other => return Err(EnvError::Config(format!("unknown environment id {other:?}"))),
        })
    }
}

/// Static description of an environment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub state_dim: usize,
    pub num_actions: usize,
    pub param_dims: Vec<usize>,
    pub max_param_dim: usize,
    pub horizon: usize,
}

impl EnvSpec {
    pub fn new(state_dim: usize, param_dims: Vec<usize>, horizon: usize) -> Self {
        let max_param_dim = param_dims.iter().copied().max().unwrap_or(0);
        Self {
            state_dim,
            num_actions: param_dims.len(),
            param_dims,
            max_param_dim,
            horizon,
        }
    }

    /// Width used for padded parameter vectors (never zero).
    pub fn padded_param_dim(&self) -> usize {
        self.max_param_dim.max(1)
    }
}

/// Discrete choice plus its continuous parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridAction {
    pub k: usize,
    pub x: Vec<f64>,
}

impl HybridAction {
    pub fn new(k: usize, x: Vec<f64>) -> Self {
        Self { k, x }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub success: bool,
    /// The episode ended only because the horizon was reached.
    pub truncated: bool,
}

impl StepResult {
    /// Ended by success or failure rather than by the time limit.
    pub fn terminal(&self) -> bool {
        self.done && !self.truncated
    }
}

pub fn env_spec(id: EnvId, n: usize) -> Result<EnvSpec, EnvError> {
    Ok(match id {
        EnvId::Platform => Platform::spec(),
        EnvId::Goal => Goal::spec(false),
        EnvId::HardGoal => Goal::spec(true),
        EnvId::CatchPoint => CatchPoint::spec(),
        EnvId::HardMove => HardMove::spec(n)?,
        EnvId::Linear => SyntheticLinear::spec(),
    })
}

/// Interface every agent consumes.
pub trait Environment {
    fn spec(&self) -> &EnvSpec;
    /// Seeds the environment RNG and starts a new episode.
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    fn step(&mut self, action: &HybridAction) -> Result<StepResult, EnvError>;
    /// Number of parameters clamped into `[-1, 1]` so far.
    fn clamp_warnings(&self) -> u64;
}

/// Bookkeeping shared by all environments: step counter, termination and
/// parameter validation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub(crate) struct EpisodeClock {
    pub t: usize,
    pub done: bool,
    pub clamped: u64,
}

impl EpisodeClock {
    pub fn restart(&mut self) {
        self.t = 0;
        self.done = false;
    }

    /// Validates the action and returns its parameters clamped into `[-1, 1]`.
    pub fn begin(&mut self, spec: &EnvSpec, a: &HybridAction) -> Result<Vec<f64>, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeDone);
        }
        if a.k >= spec.num_actions {
            return Err(EnvError::InvalidAction(format!(
                "k = {} but only {} discrete actions",
                a.k, spec.num_actions
            )));
        }
        let want = spec.param_dims[a.k];
        if a.x.len() != want {
            return Err(EnvError::InvalidAction(format!(
                "action {} takes {want} parameters, got {}",
                a.k,
                a.x.len()
            )));
        }
        if a.x.iter().any(|v| v.is_nan()) {
            return Err(EnvError::InvalidAction("NaN parameter".into()));
        }
        let mut x = a.x.clone();
        for v in &mut x {
            if *v < -1.0 || *v > 1.0 {
                self.clamped += 1;
                log::warn!("parameter {v} clamped into [-1, 1]");
                *v = v.clamp(-1.0, 1.0);
            }
        }
        Ok(x)
    }

    /// Advances the clock and fills in `done`/`truncated`.
    pub fn finish(&mut self, spec: &EnvSpec, next_state: Vec<f64>, reward: f64, ended: bool, success: bool) -> StepResult {
        self.t += 1;
        let truncated = !ended && self.t >= spec.horizon;
        self.done = ended || truncated;
        StepResult {
            next_state,
            reward,
            done: self.done,
            success,
            truncated,
        }
    }
}

/// Any of the environments behind one concrete, serializable type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Env {
    Platform(Platform),
    Goal(Goal),
    CatchPoint(CatchPoint),
    HardMove(HardMove),
    Linear(SyntheticLinear),
}

impl Env {
    pub fn new(id: EnvId, n: usize) -> Result<Self, EnvError> {
        Ok(match id {
            EnvId::Platform => Env::Platform(Platform::new()),
            EnvId::Goal => Env::Goal(Goal::new(false)),
            EnvId::HardGoal => Env::Goal(Goal::new(true)),
            EnvId::CatchPoint => Env::CatchPoint(CatchPoint::new()),
            EnvId::HardMove => Env::HardMove(HardMove::new(n)?),
            EnvId::Linear => Env::Linear(SyntheticLinear::new()),
        })
    }

    fn inner(&self) -> &dyn Environment {
        match self {
            Env::Platform(e) => e,
            Env::Goal(e) => e,
            Env::CatchPoint(e) => e,
            Env::HardMove(e) => e,
            Env::Linear(e) => e,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Environment {
        match self {
            Env::Platform(e) => e,
            Env::Goal(e) => e,
            Env::CatchPoint(e) => e,
            Env::HardMove(e) => e,
            Env::Linear(e) => e,
        }
    }
}

impl Environment for Env {
    fn spec(&self) -> &EnvSpec {
        self.inner().spec()
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.inner_mut().reset(seed)
    }

    fn step(&mut self, action: &HybridAction) -> Result<StepResult, EnvError> {
        self.inner_mut().step(action)
    }

    fn clamp_warnings(&self) -> u64 {
        self.inner().clamp_warnings()
    }
}

/// Writes `t, s…, k, x…, r, done` rows; parameters are zero-padded to the
/// environment's widest action.
pub struct TrajectoryWriter<W: Write> {
    out: W,
    state_dim: usize,
    param_dim: usize,
}

impl<W: Write> TrajectoryWriter<W> {
    pub fn new(mut out: W, spec: &EnvSpec) -> Result<Self, EnvError> {
        let mut header = vec!["t".to_string()];
        header.extend((0..spec.state_dim).map(|i| format!("s{i}")));
        header.push("k".into());
        header.extend((0..spec.max_param_dim).map(|i| format!("x{i}")));
        header.push("r".into());
        header.push("done".into());
        writeln!(out, "{}", header.join(","))?;
        Ok(Self {
            out,
            state_dim: spec.state_dim,
            param_dim: spec.max_param_dim,
        })
    }

    pub fn record(&mut self, t: usize, state: &[f64], action: &HybridAction, result: &StepResult) -> Result<(), EnvError> {
        debug_assert_eq!(state.len(), self.state_dim);
        let mut row = vec![t.to_string()];
        row.extend(state.iter().map(|v| v.to_string()));
        row.push(action.k.to_string());
        row.extend((0..self.param_dim).map(|i| action.x.get(i).copied().unwrap_or(0.0).to_string()));
        row.push(result.reward.to_string());
        row.push((result.done as u8).to_string());
        writeln!(self.out, "{}", row.join(","))?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_action(spec: &EnvSpec, rng: &mut ChaCha8Rng) -> HybridAction {
        let k = rng.random_range(0..spec.num_actions);
        let x = (0..spec.param_dims[k]).map(|_| rng.random_range(-1.0..=1.0)).collect();
        HybridAction::new(k, x)
    }

    fn all_envs() -> Vec<Env> {
        let mut v: Vec<Env> = EnvId::BENCHMARKS
            .iter()
            .filter(|id| **id != EnvId::HardMove)
            .map(|&id| Env::new(id, 0).unwrap())
            .collect();
        for n in [4, 8] {
            v.push(Env::new(EnvId::HardMove, n).unwrap());
        }
        v
    }

    #[test]
    fn static_specs() {
        let hm = env_spec(EnvId::HardMove, 8).unwrap();
        assert_eq!((hm.num_actions, hm.state_dim, hm.horizon), (256, 4, 25));
        assert!(hm.param_dims.iter().all(|&d| d == 8));
        let p = env_spec(EnvId::Platform, 0).unwrap();
        assert_eq!((p.num_actions, p.param_dims.clone(), p.horizon), (3, vec![1, 1, 1], 20));
        let g = env_spec(EnvId::Goal, 0).unwrap();
        assert_eq!((g.num_actions, g.param_dims.clone(), g.horizon), (3, vec![2, 1, 1], 50));
        let hg = env_spec(EnvId::HardGoal, 0).unwrap();
        assert_eq!((hg.num_actions, hg.horizon), (11, 50));
        let c = env_spec(EnvId::CatchPoint, 0).unwrap();
        assert_eq!((c.num_actions, c.horizon), (2, 20));
        assert!("soccer".parse::<EnvId>().is_err());
    }

    #[test]
    fn seeded_trajectories_are_bit_identical() {
        for env in all_envs() {
            let run = |mut e: Env| {
                let mut rng = ChaCha8Rng::seed_from_u64(11);
                let mut trace = Vec::new();
                for ep in 0..5 {
                    let s = e.reset(100 + ep);
                    trace.extend(s.iter().map(|v| v.to_bits()));
                    loop {
                        let a = random_action(e.spec(), &mut rng);
                        let r = e.step(&a).unwrap();
                        trace.extend(r.next_state.iter().map(|v| v.to_bits()));
                        trace.push(r.reward.to_bits());
                        trace.push(r.done as u64);
                        if r.done {
                            break;
                        }
                    }
                }
                trace
            };
            assert_eq!(run(env.clone()), run(env));
        }
    }

    #[test]
    fn states_bounded_and_episodes_respect_horizon() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for mut env in all_envs() {
            let spec = env.spec().clone();
            for ep in 0..200 {
                let s = env.reset(ep);
                assert_eq!(s.len(), spec.state_dim);
                assert!(s.iter().all(|v| v.is_finite() && (-1.0..=1.0).contains(v)), "{s:?}");
                let mut len = 0;
                loop {
                    let a = random_action(&spec, &mut rng);
                    let r = env.step(&a).unwrap();
                    len += 1;
                    assert!(
                        r.next_state.iter().all(|v| v.is_finite() && (-1.0..=1.0).contains(v)),
                        "{:?}",
                        r.next_state
                    );
                    assert!(r.reward.is_finite());
                    if r.success {
                        assert!(r.done && !r.truncated);
                    }
                    if r.done {
                        break;
                    }
                }
                assert!(len <= spec.horizon);
            }
        }
    }

    #[test]
    fn step_after_done_is_a_usage_error() {
        let mut env = Env::new(EnvId::CatchPoint, 0).unwrap();
        env.reset(0);
        loop {
            if env.step(&HybridAction::new(0, vec![0.0])).unwrap().done {
                break;
            }
        }
        assert!(matches!(env.step(&HybridAction::new(0, vec![0.0])), Err(EnvError::EpisodeDone)));
    }

    #[test]
    fn invalid_actions_and_clamping() {
        let mut env = Env::new(EnvId::Platform, 0).unwrap();
        env.reset(0);
        assert!(matches!(env.step(&HybridAction::new(3, vec![0.0])), Err(EnvError::InvalidAction(_))));
        assert!(matches!(env.step(&HybridAction::new(0, vec![0.0, 1.0])), Err(EnvError::InvalidAction(_))));
        env.step(&HybridAction::new(0, vec![1.7])).unwrap();
        assert_eq!(env.clamp_warnings(), 1);
    }

    #[test]
    fn trajectory_csv_layout() {
        let mut env = Env::new(EnvId::Goal, 0).unwrap();
        let s = env.reset(0);
        let mut w = TrajectoryWriter::new(Vec::new(), env.spec()).unwrap();
        let a = HybridAction::new(1, vec![0.5]);
        let r = env.step(&a).unwrap();
        w.record(0, &s, &a, &r).unwrap();
        let text = String::from_utf8(w.into_inner()).unwrap();
        let mut lines = text.lines();
        let header = lines.next().unwrap();
        assert!(header.starts_with("t,s0,s1"));
        assert!(header.ends_with("s13,k,x0,x1,r,done"));
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row.len(), 1 + 14 + 1 + 2 + 2);
        assert_eq!(row[15], "1");
        assert_eq!(row[17], "0");
    }
}
