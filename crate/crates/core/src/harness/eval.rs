use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agent::{decode_action, Agent};
use crate::envs::{Env, EnvId, EnvSpec, Environment, HybridAction};
use crate::repr::{LatentBounds, ReprModel};

use super::run::{episode_seed, splitmix64};
use super::HarnessError;

const EVAL_STREAM: u64 = 0x6576_616c;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub mean_return: f64,
    pub success_rate: f64,
    pub episodes: usize,
}

/// Seed of the evaluation episodes of a run; fixed for the whole run.
pub fn eval_seed(run_seed: u64) -> u64 {
    splitmix64(run_seed ^ EVAL_STREAM)
}

/// Uniform discrete action with parameters uniform over `[-1, 1]`.
pub fn random_action<R: Rng + ?Sized>(spec: &EnvSpec, rng: &mut R) -> HybridAction {
    let k = rng.random_range(0..spec.num_actions);
    let x = (0..spec.param_dims[k]).map(|_| rng.random_range(-1.0..=1.0)).collect();
    HybridAction::new(k, x)
}

/// Runs `episodes` full episodes on a fresh environment; episode `i` is reset
/// with `episode_seed(seed, i)`.
pub fn evaluate_policy<F>(env_id: EnvId, n: usize, episodes: usize, seed: u64, mut policy: F) -> Result<EvalResult, HarnessError>
where
    F: FnMut(&[f64]) -> Result<HybridAction, HarnessError>,
{
    if episodes == 0 {
        return Err(HarnessError::Config("evaluation needs at least one episode".into()));
    }
    let mut env = Env::new(env_id, n)?;
    let (mut total, mut successes) = (0.0, 0usize);
    for i in 0..episodes {
        let mut s = env.reset(episode_seed(seed, i as u64));
        let mut success = false;
        loop {
            let a = policy(&s)?;
            let r = env.step(&a)?;
            total += r.reward;
            success |= r.success;
            if r.done {
                break;
            }
            s = r.next_state;
        }
        successes += success as usize;
    }
    Ok(EvalResult {
        mean_return: total / episodes as f64,
        success_rate: successes as f64 / episodes as f64,
        episodes,
    })
}

/// Greedy evaluation of the latent policy (no exploration noise).
pub fn evaluate(
    agent: &Agent,
    repr: &ReprModel,
    bounds: &LatentBounds,
    env_id: EnvId,
    n: usize,
    episodes: usize,
    seed: u64,
) -> Result<EvalResult, HarnessError> {
    // never sampled: exploration is off
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    evaluate_policy(env_id, n, episodes, seed, |s| {
        let latent = agent.select_latent_action(bounds, s, false, &mut unused)?;
        Ok(decode_action(repr, s, &latent)?)
    })
}
