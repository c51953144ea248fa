//! Run configuration with flat `section.key = value` files.
//!
//! Defaults depend on the environment and algorithm, so a config is resolved
//! from the explicit key/value pairs in one go: `env.id` and `run.algo` pick
//! the defaults, then every explicit pair is applied on top.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::{AgentConfig, Algo};
use crate::envs::{env_spec, EnvId};
use crate::repr::{ReprConfig, ReprTrainConfig, MIN_BOUND_SAMPLES};

use super::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub env_id: EnvId,
    /// Actuator count for hard_move; ignored elsewhere.
    pub env_n: usize,
    pub seed: u64,
    pub total_env_steps: u64,
    pub warmup_env_steps: u64,
    /// Save a checkpoint every this many env steps (0 = only at the end).
    pub checkpoint_every: u64,
    pub repr: ReprConfig,
    pub repr_train: ReprTrainConfig,
    pub pretrain_batches: usize,
    /// Representation update cadence in completed training episodes.
    pub repr_every_episodes: u64,
    pub repr_periodic_batches: usize,
    /// Central percentage kept by the latent bounds.
    pub lsc_c: f64,
    /// Stored transitions sampled to compute the latent bounds.
    pub lsc_samples: usize,
    pub agent: AgentConfig,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub out_dir: PathBuf,
}

/// Warm-up steps per environment.
pub fn default_warmup(env: EnvId) -> u64 {
    match env {
        EnvId::Platform | EnvId::Goal | EnvId::HardGoal => 5_000,
        EnvId::CatchPoint | EnvId::HardMove => 20_000,
        EnvId::Linear => 5_000,
    }
}

/// Total env steps per environment (warm-up included).
pub fn default_total(env: EnvId) -> u64 {
    match env {
        EnvId::Platform => 200_000,
        EnvId::Goal | EnvId::HardGoal => 300_000,
        EnvId::CatchPoint | EnvId::HardMove => 1_000_000,
        EnvId::Linear => 20_000,
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, HarnessError> {
    value
        .parse()
        .map_err(|_| HarnessError::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_opt_f64(key: &str, value: &str) -> Result<Option<f64>, HarnessError> {
    match value {
        "none" | "" => Ok(None),
        v => parse(key, v).map(Some),
    }
}

fn opt_to_string(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |x| x.to_string())
}

impl RunConfig {
    pub fn defaults(env_id: EnvId, algo: Algo) -> Self {
        Self {
            env_id,
            env_n: 4,
            seed: 0,
            total_env_steps: default_total(env_id),
            warmup_env_steps: default_warmup(env_id),
            checkpoint_every: 0,
            repr: ReprConfig::default(),
            repr_train: ReprTrainConfig::default(),
            pretrain_batches: 5_000,
            repr_every_episodes: 10,
            repr_periodic_batches: 1,
            lsc_c: 96.0,
            lsc_samples: 5_000,
            agent: AgentConfig::for_algo(algo),
            eval_interval: 5_000,
            eval_episodes: 100,
            out_dir: PathBuf::from("runs"),
        }
    }

    /// Builds a config from explicit pairs; `env.id` is required.
    pub fn resolve(explicit: &BTreeMap<String, String>) -> Result<Self, HarnessError> {
        let env_id: EnvId = explicit
            .get("env.id")
            .ok_or_else(|| HarnessError::Config("env.id is required".into()))?
            .parse()
            .map_err(|e: crate::envs::EnvError| HarnessError::Config(e.to_string()))?;
        let algo: Algo = match explicit.get("run.algo") {
            Some(a) => a.parse().map_err(|e: crate::agent::AgentError| HarnessError::Config(e.to_string()))?,
            None => Algo::Td3,
        };
        let mut cfg = Self::defaults(env_id, algo);
        for (k, v) in explicit {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        let v = value.trim();
        let a = &mut self.agent;
        match key {
            "env.id" => {
                self.env_id = v.parse().map_err(|e: crate::envs::EnvError| HarnessError::Config(e.to_string()))?
            }
            "env.n" => self.env_n = parse(key, v)?,
            "run.algo" => {
                a.algo = v.parse().map_err(|e: crate::agent::AgentError| HarnessError::Config(e.to_string()))?
            }
            "run.seed" => self.seed = parse(key, v)?,
            "train.total_env_steps" => self.total_env_steps = parse(key, v)?,
            "train.warmup_env_steps" => self.warmup_env_steps = parse(key, v)?,
            "train.checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "repr.d1" => self.repr.d1 = parse(key, v)?,
            "repr.d2" => self.repr.d2 = parse(key, v)?,
            "repr.hidden" => self.repr.hidden = parse(key, v)?,
            "repr.lr" => self.repr_train.lr = parse(key, v)?,
            "repr.batch_size" => self.repr_train.batch_size = parse(key, v)?,
            "repr.beta" => self.repr_train.beta = parse(key, v)?,
            "repr.kl_weight" => self.repr_train.kl_weight = parse(key, v)?,
            "repr.max_grad_norm" => self.repr_train.max_grad_norm = parse_opt_f64(key, v)?,
            "repr.pretrain_batches" => self.pretrain_batches = parse(key, v)?,
            "repr.every_episodes" => self.repr_every_episodes = parse(key, v)?,
            "repr.periodic_batches" => self.repr_periodic_batches = parse(key, v)?,
            "lsc.c" => self.lsc_c = parse(key, v)?,
            "lsc.samples" => self.lsc_samples = parse(key, v)?,
            "agent.gamma" => a.gamma = parse(key, v)?,
            "agent.actor_lr" => a.actor_lr = parse(key, v)?,
            "agent.critic_lr" => a.critic_lr = parse(key, v)?,
            "agent.tau_actor" => a.tau_actor = parse(key, v)?,
            "agent.tau_critic" => a.tau_critic = parse(key, v)?,
            "agent.explore_sigma" => a.explore_sigma = parse(key, v)?,
            "agent.batch_size" => a.batch_size = parse(key, v)?,
            "agent.policy_delay" => a.policy_delay = parse(key, v)?,
            "agent.buffer_capacity" => a.buffer_capacity = parse(key, v)?,
            "agent.hidden" => a.hidden = parse(key, v)?,
            "agent.target_smoothing" => a.target_smoothing = parse(key, v)?,
            "agent.smoothing_sigma" => a.smoothing_sigma = parse(key, v)?,
            "agent.smoothing_clip" => a.smoothing_clip = parse(key, v)?,
            "agent.relabel_sigma" => a.relabel_sigma = parse(key, v)?,
            "agent.relabel_redraws" => a.relabel_redraws = parse(key, v)?,
            "agent.relabel_threshold" => a.relabel_threshold = parse(key, v)?,
            "agent.max_grad_norm" => a.max_grad_norm = parse_opt_f64(key, v)?,
            "eval.interval" => self.eval_interval = parse(key, v)?,
            "eval.episodes" => self.eval_episodes = parse(key, v)?,
            "out.dir" => self.out_dir = PathBuf::from(v),
            other => return Err(HarnessError::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Every key with its resolved value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let a = &self.agent;
        vec![
            ("env.id", self.env_id.to_string()),
            ("env.n", self.env_n.to_string()),
            ("run.algo", a.algo.to_string()),
            ("run.seed", self.seed.to_string()),
            ("train.total_env_steps", self.total_env_steps.to_string()),
            ("train.warmup_env_steps", self.warmup_env_steps.to_string()),
            ("train.checkpoint_every", self.checkpoint_every.to_string()),
            ("repr.d1", self.repr.d1.to_string()),
            ("repr.d2", self.repr.d2.to_string()),
            ("repr.hidden", self.repr.hidden.to_string()),
            ("repr.lr", self.repr_train.lr.to_string()),
            ("repr.batch_size", self.repr_train.batch_size.to_string()),
            ("repr.beta", self.repr_train.beta.to_string()),
            ("repr.kl_weight", self.repr_train.kl_weight.to_string()),
            ("repr.max_grad_norm", opt_to_string(self.repr_train.max_grad_norm)),
            ("repr.pretrain_batches", self.pretrain_batches.to_string()),
            ("repr.every_episodes", self.repr_every_episodes.to_string()),
            ("repr.periodic_batches", self.repr_periodic_batches.to_string()),
            ("lsc.c", self.lsc_c.to_string()),
            ("lsc.samples", self.lsc_samples.to_string()),
            ("agent.gamma", a.gamma.to_string()),
            ("agent.actor_lr", a.actor_lr.to_string()),
            ("agent.critic_lr", a.critic_lr.to_string()),
            ("agent.tau_actor", a.tau_actor.to_string()),
            ("agent.tau_critic", a.tau_critic.to_string()),
            ("agent.explore_sigma", a.explore_sigma.to_string()),
            ("agent.batch_size", a.batch_size.to_string()),
            ("agent.policy_delay", a.policy_delay.to_string()),
            ("agent.buffer_capacity", a.buffer_capacity.to_string()),
            ("agent.hidden", a.hidden.to_string()),
            ("agent.target_smoothing", a.target_smoothing.to_string()),
            ("agent.smoothing_sigma", a.smoothing_sigma.to_string()),
            ("agent.smoothing_clip", a.smoothing_clip.to_string()),
            ("agent.relabel_sigma", a.relabel_sigma.to_string()),
            ("agent.relabel_redraws", a.relabel_redraws.to_string()),
            ("agent.relabel_threshold", a.relabel_threshold.to_string()),
            ("agent.max_grad_norm", opt_to_string(a.max_grad_norm)),
            ("eval.interval", self.eval_interval.to_string()),
            ("eval.episodes", self.eval_episodes.to_string()),
            ("out.dir", self.out_dir.display().to_string()),
        ]
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        env_spec(self.env_id, self.env_n).map_err(|e| HarnessError::Config(e.to_string()))?;
        self.agent
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        if self.warmup_env_steps >= self.total_env_steps {
            return bad(format!(
                "warm-up steps ({}) must be fewer than total steps ({})",
                self.warmup_env_steps, self.total_env_steps
            ));
        }
        let min_warmup = (self.repr_train.batch_size.max(MIN_BOUND_SAMPLES)) as u64;
        if self.warmup_env_steps < min_warmup {
            return bad(format!("warm-up needs at least {min_warmup} steps, got {}", self.warmup_env_steps));
        }
        if self.warmup_env_steps as usize > self.agent.buffer_capacity {
            return bad("warm-up steps exceed the replay capacity".into());
        }
        if self.repr.d1 == 0 || self.repr.d2 == 0 || self.repr.hidden == 0 {
            return bad("repr.d1, repr.d2 and repr.hidden must be positive".into());
        }
        if !(self.repr_train.lr >= 0.0) || !(self.repr_train.beta >= 0.0) || !(self.repr_train.kl_weight >= 0.0) {
            return bad("repr.lr, repr.beta and repr.kl_weight must be non-negative".into());
        }
        if self.repr_train.batch_size == 0 || self.repr_every_episodes == 0 {
            return bad("repr.batch_size and repr.every_episodes must be positive".into());
        }
        if !(self.lsc_c > 0.0 && self.lsc_c <= 100.0) {
            return bad(format!("lsc.c must lie in (0, 100], got {}", self.lsc_c));
        }
        if self.lsc_samples < MIN_BOUND_SAMPLES {
            return bad(format!("lsc.samples must be at least {MIN_BOUND_SAMPLES}"));
        }
        if self.eval_interval == 0 || self.eval_episodes == 0 {
            return bad("eval.interval and eval.episodes must be positive".into());
        }
        Ok(())
    }

    /// `key = value` lines for every key, defaults included.
    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

/// Parses a flat config file: `section.key = value` lines, `#` comments.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>, HarnessError> {
    let mut out = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| HarnessError::Config(format!("line {}: expected `key = value`, got {raw:?}", lineno + 1)))?;
        let k = k.trim();
        if !k.contains('.') || k.contains(char::is_whitespace) {
            return Err(HarnessError::Config(format!("line {}: bad key {k:?}", lineno + 1)));
        }
        out.insert(k.to_string(), v.trim().to_string());
    }
    Ok(out)
}

pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    parse_config_text(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn explicit(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn defaults_follow_environment_and_algorithm() {
        let c = RunConfig::resolve(&explicit(&[("env.id", "hard_move"), ("run.algo", "hyar-ddpg")])).unwrap();
        assert_eq!(c.warmup_env_steps, 20_000);
        assert_eq!(c.agent.critic_lr, 1e-3);
        assert_eq!(c.agent.policy_delay, 1);
        let p = RunConfig::resolve(&explicit(&[("env.id", "platform")])).unwrap();
        assert_eq!((p.warmup_env_steps, p.total_env_steps), (5_000, 200_000));
        assert_eq!(p.agent.algo, Algo::Td3);
    }

    #[test]
    fn every_key_roundtrips_through_text() {
        let c = RunConfig::resolve(&explicit(&[("env.id", "goal"), ("agent.max_grad_norm", "2.5"), ("run.seed", "7")])).unwrap();
        let back = RunConfig::resolve(&parse_config_text(&c.to_text()).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn bad_input_is_a_config_error() {
        assert!(parse_config_text("env.id platform").is_err());
        assert!(RunConfig::resolve(&explicit(&[("env.id", "pong")])).is_err());
        assert!(RunConfig::resolve(&explicit(&[("env.id", "goal"), ("agent.nope", "1")])).is_err());
        assert!(RunConfig::resolve(&explicit(&[("env.id", "goal"), ("train.total_env_steps", "100")])).is_err());
        assert!(RunConfig::resolve(&explicit(&[("env.id", "goal"), ("agent.gamma", "1.0")])).is_err());
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let m = parse_config_text("# header\n\nenv.id = goal   # trailing\n run.seed=3\n").unwrap();
        assert_eq!(m, explicit(&[("env.id", "goal"), ("run.seed", "3")]));
    }
}
