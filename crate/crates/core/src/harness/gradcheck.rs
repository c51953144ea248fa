use ndarray::{concatenate, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::agent::{Agent, AgentBatch, AgentConfig, Algo};
use crate::envs::{env_spec, EnvId, EnvSpec};
use crate::numkit::{finite_diff_check, CheckPlan, Evaluation, GradCheckReport, ParameterSet};
use crate::repr::{LatentBounds, ParamGroup, ReprBatch, ReprConfig, ReprModel};

use super::HarnessError;

/// Central-difference step.
pub const GRADCHECK_H: f64 = 1e-5;
/// Largest accepted relative error.
pub const GRADCHECK_TOL: f64 = 1e-4;
const BATCH: usize = 8;
const PROBES_PER_ENTRY: usize = 48;

/// Result for one network component on one environment.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckLine {
    pub env: EnvId,
    pub component: &'static str,
    pub report: GradCheckReport,
}

impl GradCheckLine {
    pub fn passes(&self) -> bool {
        self.report.passes(GRADCHECK_TOL)
    }
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

fn repr_batch(spec: &EnvSpec, rng: &mut ChaCha8Rng) -> Result<ReprBatch, HarnessError> {
    let ks: Vec<usize> = (0..BATCH).map(|_| rng.random_range(0..spec.num_actions)).collect();
    let params = Array2::from_shape_fn((BATCH, spec.padded_param_dim()), |(i, j)| {
        if j < spec.param_dims[ks[i]] {
            rng.random_range(-1.0..1.0)
        } else {
            0.0
        }
    });
    let states = uniform(rng, BATCH, spec.state_dim);
    let next = uniform(rng, BATCH, spec.state_dim);
    Ok(ReprBatch::new(states, ks, params, next)?)
}

fn check_repr(env: EnvId, spec: &EnvSpec, seed: u64) -> Result<Vec<GradCheckLine>, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = ReprModel::new(spec, ReprConfig::default(), &mut rng)?;
    let batch = repr_batch(spec, &mut rng)?;
    let noise = Array2::from_shape_fn((BATCH, model.d2()), |_| rng.sample(StandardNormal));
    let (beta, kl) = (10.0, 0.5);
    let (_, grads) = model.loss_and_grads(&batch, noise.view(), beta, kl)?;
    let components = [
        ("table", ParamGroup::Table),
        ("encoder", ParamGroup::Encoder),
        ("decoder.shared", ParamGroup::SharedDecoder),
        ("decoder.reconstruction", ParamGroup::Reconstruction),
        ("decoder.prediction", ParamGroup::Prediction),
    ];
    let mut lines = Vec::new();
    for (i, (name, group)) in components.into_iter().enumerate() {
        let plan = CheckPlan::sampled(PROBES_PER_ENTRY, seed ^ i as u64).only(model.group_entries(group).collect());
        let mut probe = model.clone();
        let report = finite_diff_check(model.params(), &grads, GRADCHECK_H, &plan, |p| {
            probe.params_mut().assign(p).expect("same layout");
            let (loss, signature) = probe.loss(&batch, noise.view(), beta, kl).expect("valid batch");
            Evaluation {
                loss: loss.total,
                signature,
            }
        })?;
        lines.push(GradCheckLine { env, component: name, report });
    }
    Ok(lines)
}

fn check_agent(env: EnvId, spec: &EnvSpec, seed: u64) -> Result<Vec<GradCheckLine>, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = AgentConfig::for_algo(Algo::Td3);
    let (d1, d2) = (ReprConfig::default().d1, ReprConfig::default().d2);
    let agent = Agent::new(cfg, spec.state_dim, d1, d2, &mut rng)?;
    let latent_dim = d1 + d2;
    let lower: Vec<f64> = (0..latent_dim).map(|_| rng.random_range(-1.5..-0.2)).collect();
    let upper: Vec<f64> = (0..latent_dim).map(|_| rng.random_range(0.2..1.5)).collect();
    let bounds = LatentBounds::new(lower, upper, 96.0)?;
    let batch = AgentBatch {
        states: uniform(&mut rng, BATCH, spec.state_dim),
        ks: vec![0; BATCH],
        params: Array2::zeros((BATCH, spec.padded_param_dim())),
        latents: uniform(&mut rng, BATCH, latent_dim),
        rewards: (0..BATCH).map(|_| rng.random_range(-1.0..1.0)).collect(),
        next_states: uniform(&mut rng, BATCH, spec.state_dim),
        dones: (0..BATCH).map(|i| i % 4 == 0).collect(),
    };
    let plan = CheckPlan::sampled(PROBES_PER_ENTRY, seed);
    let mut lines = Vec::new();

    let (_, g) = agent.actor_gradient(&agent.actor, &agent.critics[0], batch.states.view(), &bounds)?;
    let report = finite_diff_check(&agent.actor, &g, GRADCHECK_H, &plan, |p: &ParameterSet| {
        let (loss, signature) = agent
            .actor_objective(p, &agent.critics[0], batch.states.view(), &bounds)
            .expect("valid batch");
        Evaluation { loss, signature }
    })?;
    lines.push(GradCheckLine { env, component: "actor", report });

    let y = agent.td_targets(&batch, &bounds, &mut rng)?;
    let inputs = concatenate![Axis(1), batch.states, batch.latents];
    for (i, name) in ["critic1", "critic2"].into_iter().enumerate() {
        let critic = &agent.critics[i];
        let (_, g) = agent.critic_gradient(critic, inputs.view(), &y)?;
        let report = finite_diff_check(critic, &g, GRADCHECK_H, &plan, |p: &ParameterSet| {
            let (loss, signature) = agent.critic_objective(p, inputs.view(), &y).expect("valid batch");
            Evaluation { loss, signature }
        })?;
        lines.push(GradCheckLine { env, component: name, report });
    }
    Ok(lines)
}

/// Finite-difference check of every trained component (actor, both critics,
/// embedding table, encoder and each decoder part) at full network width on
/// random batches of 8, for each listed environment.
pub fn gradcheck_suite(envs: &[(EnvId, usize)], seed: u64) -> Result<Vec<GradCheckLine>, HarnessError> {
    let mut lines = Vec::new();
    for (i, &(env, n)) in envs.iter().enumerate() {
        let spec = env_spec(env, n)?;
        let s = seed.wrapping_add(i as u64 * 1_000);
        lines.extend(check_agent(env, &spec, s)?);
        lines.extend(check_repr(env, &spec, s + 1)?);
    }
    Ok(lines)
}
