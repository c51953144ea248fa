use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::numkit::{adam_step, soft_update, AdamConfig, AdamState, Activation, Checkpoint, LayerSpec, Mlp, NumError, ParameterSet};
use crate::repr::LatentBounds;

use super::{perturb, AgentBatch, AgentConfig, AgentError, Algo, LatentAction};

/// Losses from one [`Agent::update`] call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateLosses {
    pub critic: f64,
    pub actor: Option<f64>,
}

/// Actor, critics, their target copies and optimizer states.
///
/// The actor maps a state to a raw latent in `[-1, 1]^{d1+d2}` (tanh output);
/// the current latent bounds rescale it before it reaches a critic or the
/// decoder. TD3 keeps two critics, DDPG one.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub config: AgentConfig,
    state_dim: usize,
    d1: usize,
    latent_dim: usize,
    actor_net: Mlp,
    critic_net: Mlp,
    pub actor: ParameterSet,
    pub actor_target: ParameterSet,
    pub critics: Vec<ParameterSet>,
    pub critic_targets: Vec<ParameterSet>,
    pub actor_adam: AdamState,
    pub critic_adams: Vec<AdamState>,
    pub critic_updates: u64,
    pub actor_updates: u64,
}

fn rescale_rows(bounds: &LatentBounds, raw: &Array2<f64>) -> Array2<f64> {
    let mut out = raw.clone();
    for (j, mut col) in out.columns_mut().into_iter().enumerate() {
        let (l, u) = (bounds.lower[j], bounds.upper[j]);
        col.mapv_inplace(|r| l + 0.5 * (r + 1.0) * (u - l));
    }
    out
}

fn check_bounds(bounds: &LatentBounds, dim: usize) -> Result<(), AgentError> {
    if bounds.dim() != dim {
        return Err(NumError::Shape(format!("bounds have {} dims, policy outputs {dim}", bounds.dim())).into());
    }
    Ok(())
}

fn mix(h: u64, v: u64) -> u64 {
    (h ^ v).wrapping_mul(0x0000_0100_0000_01b3)
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(
        config: AgentConfig,
        state_dim: usize,
        d1: usize,
        d2: usize,
        rng: &mut R,
    ) -> Result<Self, AgentError> {
        config.validate()?;
        let latent_dim = d1 + d2;
        let h = config.hidden;
        let actor_spec = LayerSpec::mlp(state_dim, &[h, h], latent_dim, Activation::Tanh)?;
        let critic_spec = LayerSpec::mlp(state_dim + latent_dim, &[h, h], 1, Activation::None)?;
        let mut actor = ParameterSet::new();
        let actor_net = Mlp::register(actor_spec, "actor", &mut actor, rng);
        let n_critics = match config.algo {
            Algo::Td3 => 2,
            Algo::Ddpg => 1,
        };
        let mut critics = Vec::with_capacity(n_critics);
        let mut critic_net = None;
        for i in 0..n_critics {
            let mut p = ParameterSet::new();
            critic_net = Some(Mlp::register(critic_spec.clone(), &format!("critic{i}"), &mut p, rng));
            critics.push(p);
        }
        let adam = |p: &ParameterSet, lr| {
            AdamState::new(
                p,
                AdamConfig {
                    max_grad_norm: config.max_grad_norm,
                    ..AdamConfig::with_lr(lr)
                },
            )
        };
        Ok(Self {
            config,
            state_dim,
            d1,
            latent_dim,
            actor_net,
            critic_net: critic_net.expect("at least one critic"),
            actor_target: actor.clone(),
            actor_adam: adam(&actor, config.actor_lr),
            critic_adams: critics.iter().map(|c| adam(c, config.critic_lr)).collect(),
            critic_targets: critics.clone(),
            actor,
            critics,
            critic_updates: 0,
            actor_updates: 0,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn d1(&self) -> usize {
        self.d1
    }

    /// Raw tanh outputs for a batch of states under `actor`.
    pub fn raw_policy(&self, actor: &ParameterSet, states: ArrayView2<'_, f64>) -> Result<Array2<f64>, AgentError> {
        Ok(self.actor_net.predict(actor, states)?)
    }

    /// Policy output for one state, optionally perturbed, rescaled into `bounds`.
    pub fn select_latent_action<R: Rng + ?Sized>(
        &self,
        bounds: &LatentBounds,
        s: &[f64],
        explore: bool,
        rng: &mut R,
    ) -> Result<LatentAction, AgentError> {
        check_bounds(bounds, self.latent_dim)?;
        let x = ArrayView2::from_shape((1, s.len()), s).map_err(|e| NumError::Shape(e.to_string()))?;
        let mut raw = self.raw_policy(&self.actor, x)?.into_raw_vec_and_offset().0;
        if explore {
            perturb(&mut raw, self.config.explore_sigma, rng);
        }
        Ok(LatentAction::split(&bounds.rescale(&raw), self.d1))
    }

    fn critic_inputs(states: ArrayView2<'_, f64>, latents: ArrayView2<'_, f64>) -> Array2<f64> {
        concatenate![Axis(1), states, latents]
    }

    /// Q-values of one critic parameter set.
    pub fn q_values(&self, critic: &ParameterSet, states: ArrayView2<'_, f64>, latents: ArrayView2<'_, f64>) -> Result<Vec<f64>, AgentError> {
        let q = self.critic_net.predict(critic, Self::critic_inputs(states, latents).view())?;
        Ok(q.into_raw_vec_and_offset().0)
    }

    /// `r + γ(1 − done)·min_j Q̄_j(s', rescale(π̄(s')))`; with one critic the
    /// minimum is over that critic alone.
    pub fn td_targets<R: Rng + ?Sized>(&self, batch: &AgentBatch, bounds: &LatentBounds, rng: &mut R) -> Result<Vec<f64>, AgentError> {
        check_bounds(bounds, self.latent_dim)?;
        let mut raw = self.raw_policy(&self.actor_target, batch.next_states.view())?;
        if self.config.target_smoothing {
            let noise = Normal::new(0.0, self.config.smoothing_sigma).map_err(|e| AgentError::Config(e.to_string()))?;
            let c = self.config.smoothing_clip;
            raw.mapv_inplace(|r| (r + noise.sample(rng).clamp(-c, c)).clamp(-1.0, 1.0));
        }
        let next_latents = rescale_rows(bounds, &raw);
        let mut q_min = vec![f64::INFINITY; batch.len()];
        for target in &self.critic_targets {
            let q = self.q_values(target, batch.next_states.view(), next_latents.view())?;
            for (m, v) in q_min.iter_mut().zip(q) {
                *m = m.min(v);
            }
        }
        Ok(batch
            .rewards
            .iter()
            .zip(&batch.dones)
            .zip(q_min)
            .map(|((&r, &d), q)| r + self.config.gamma * if d { 0.0 } else { q })
            .collect())
    }

    /// Mean squared TD error of `critic` on `inputs = [s, e, z]`, plus the
    /// ReLU signature of the pass.
    pub fn critic_objective(&self, critic: &ParameterSet, inputs: ArrayView2<'_, f64>, y: &[f64]) -> Result<(f64, u64), AgentError> {
        let (q, tape) = self.critic_net.forward(critic, inputs)?;
        let n = y.len() as f64;
        let loss = q.iter().zip(y).map(|(q, y)| (q - y) * (q - y)).sum::<f64>() / n;
        Ok((loss, tape.relu_signature()))
    }

    pub fn critic_gradient(&self, critic: &ParameterSet, inputs: ArrayView2<'_, f64>, y: &[f64]) -> Result<(f64, ParameterSet), AgentError> {
        let (q, mut tape) = self.critic_net.forward(critic, inputs)?;
        let n = y.len() as f64;
        let mut dq = Array2::zeros(q.dim());
        let mut loss = 0.0;
        for (i, &yi) in y.iter().enumerate() {
            let err = q[[i, 0]] - yi;
            loss += err * err;
            dq[[i, 0]] = 2.0 * err / n;
        }
        let (grads, _) = tape.gradients(critic, dq.view())?;
        Ok((loss / n, grads))
    }

    /// `−mean Q(s, rescale(π(s)))` under the given actor and critic.
    pub fn actor_objective(
        &self,
        actor: &ParameterSet,
        critic: &ParameterSet,
        states: ArrayView2<'_, f64>,
        bounds: &LatentBounds,
    ) -> Result<(f64, u64), AgentError> {
        check_bounds(bounds, self.latent_dim)?;
        let (raw, atape) = self.actor_net.forward(actor, states)?;
        let lat = rescale_rows(bounds, &raw);
        let (q, ctape) = self.critic_net.forward(critic, Self::critic_inputs(states, lat.view()).view())?;
        let loss = -q.sum() / states.nrows() as f64;
        Ok((loss, mix(atape.relu_signature(), ctape.relu_signature())))
    }

    /// Gradient of [`actor_objective`](Self::actor_objective) with respect to
    /// the actor, flowing through the critic's action input and the rescaling.
    pub fn actor_gradient(
        &self,
        actor: &ParameterSet,
        critic: &ParameterSet,
        states: ArrayView2<'_, f64>,
        bounds: &LatentBounds,
    ) -> Result<(f64, ParameterSet), AgentError> {
        check_bounds(bounds, self.latent_dim)?;
        let n = states.nrows() as f64;
        let (raw, mut atape) = self.actor_net.forward(actor, states)?;
        let lat = rescale_rows(bounds, &raw);
        let (q, mut ctape) = self.critic_net.forward(critic, Self::critic_inputs(states, lat.view()).view())?;
        let loss = -q.sum() / n;
        let dq = Array2::from_elem(q.dim(), -1.0 / n);
        let dinput = ctape.input_gradient(critic, dq.view())?;
        let mut draw = dinput.slice(s![.., self.state_dim..]).to_owned();
        for (j, mut col) in draw.columns_mut().into_iter().enumerate() {
            col *= 0.5 * (bounds.upper[j] - bounds.lower[j]);
        }
        let (grads, _) = atape.gradients(actor, draw.view())?;
        Ok((loss, grads))
    }

    /// One Adam step on every critic toward the shared TD targets. Returns the
    /// mean critic loss. Nothing is updated if any gradient is non-finite.
    pub fn critic_update<R: Rng + ?Sized>(&mut self, batch: &AgentBatch, bounds: &LatentBounds, rng: &mut R) -> Result<f64, AgentError> {
        let y = self.td_targets(batch, bounds, rng)?;
        let inputs = Self::critic_inputs(batch.states.view(), batch.latents.view());
        let mut results = Vec::with_capacity(self.critics.len());
        for c in &self.critics {
            results.push(self.critic_gradient(c, inputs.view(), &y)?);
        }
        for (loss, g) in &results {
            if !loss.is_finite() {
                return Err(NumError::NumericFault(format!("critic loss is {loss}")).into());
            }
            if let Some(name) = g.first_non_finite() {
                return Err(NumError::NumericFault(format!("non-finite critic gradient in {name}")).into());
            }
        }
        let mut total = 0.0;
        for (i, (loss, g)) in results.iter().enumerate() {
            adam_step(&mut self.critics[i], g, &mut self.critic_adams[i])?;
            total += loss;
        }
        self.critic_updates += 1;
        Ok(total / results.len() as f64)
    }

    /// Deterministic policy gradient step through the first critic, followed
    /// by soft updates of every target network.
    pub fn actor_update(&mut self, batch: &AgentBatch, bounds: &LatentBounds) -> Result<f64, AgentError> {
        let (loss, g) = self.actor_gradient(&self.actor, &self.critics[0], batch.states.view(), bounds)?;
        if !loss.is_finite() {
            return Err(NumError::NumericFault(format!("actor loss is {loss}")).into());
        }
        adam_step(&mut self.actor, &g, &mut self.actor_adam)?;
        soft_update(&mut self.actor_target, &self.actor, self.config.tau_actor)?;
        for (t, c) in self.critic_targets.iter_mut().zip(&self.critics) {
            soft_update(t, c, self.config.tau_critic)?;
        }
        self.actor_updates += 1;
        Ok(loss)
    }

    /// Critic step every call; actor step (and target refresh) every
    /// `policy_delay` critic steps.
    pub fn update<R: Rng + ?Sized>(&mut self, batch: &AgentBatch, bounds: &LatentBounds, rng: &mut R) -> Result<UpdateLosses, AgentError> {
        let critic = self.critic_update(batch, bounds, rng)?;
        let actor = if self.critic_updates % self.config.policy_delay == 0 {
            Some(self.actor_update(batch, bounds)?)
        } else {
            None
        };
        Ok(UpdateLosses { critic, actor })
    }

    pub fn save_into(&self, ckpt: &mut Checkpoint, prefix: &str) {
        let mut put = |name: String, p: &ParameterSet, adam: Option<&AdamState>| {
            ckpt.push_params(&name, p);
            if let Some(a) = adam {
                ckpt.push_params(&format!("{name}.adam_m"), &a.m);
                ckpt.push_params(&format!("{name}.adam_v"), &a.v);
                ckpt.set_meta(format!("{name}.adam_t"), a.t.to_string());
            }
        };
        put(format!("{prefix}.actor"), &self.actor, Some(&self.actor_adam));
        put(format!("{prefix}.actor_target"), &self.actor_target, None);
        for i in 0..self.critics.len() {
            put(format!("{prefix}.critic{i}"), &self.critics[i], Some(&self.critic_adams[i]));
            put(format!("{prefix}.critic_target{i}"), &self.critic_targets[i], None);
        }
        ckpt.set_meta(format!("{prefix}.updates"), format!("{} {}", self.critic_updates, self.actor_updates));
    }

    /// Restores weights, optimizer moments and counters into an agent built
    /// with the same configuration.
    pub fn load_from(&mut self, ckpt: &Checkpoint, prefix: &str) -> Result<(), AgentError> {
        fn get(ckpt: &Checkpoint, name: &str, p: &mut ParameterSet, adam: Option<&mut AdamState>) -> Result<(), AgentError> {
            ckpt.load_params(name, p)?;
            if let Some(a) = adam {
                ckpt.load_params(&format!("{name}.adam_m"), &mut a.m)?;
                ckpt.load_params(&format!("{name}.adam_v"), &mut a.v)?;
                a.t = parse_u64(ckpt.meta(&format!("{name}.adam_t"))?)?;
            }
            Ok(())
        }
        get(ckpt, &format!("{prefix}.actor"), &mut self.actor, Some(&mut self.actor_adam))?;
        get(ckpt, &format!("{prefix}.actor_target"), &mut self.actor_target, None)?;
        for i in 0..self.critics.len() {
            get(ckpt, &format!("{prefix}.critic{i}"), &mut self.critics[i], Some(&mut self.critic_adams[i]))?;
            get(ckpt, &format!("{prefix}.critic_target{i}"), &mut self.critic_targets[i], None)?;
        }
        let counts: Vec<u64> = ckpt
            .meta(&format!("{prefix}.updates"))?
            .split_whitespace()
            .map(parse_u64)
            .collect::<Result<_, _>>()?;
        if counts.len() != 2 {
            return Err(NumError::Format("agent update counters need two fields".into()).into());
        }
        self.critic_updates = counts[0];
        self.actor_updates = counts[1];
        Ok(())
    }
}

fn parse_u64(s: &str) -> Result<u64, NumError> {
    s.parse().map_err(|_| NumError::Format(format!("expected an unsigned integer, got {s:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{finite_diff_check, CheckPlan, Evaluation};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(algo: Algo) -> (Agent, AgentBatch, LatentBounds) {
        let mut cfg = AgentConfig::for_algo(algo);
        cfg.hidden = 8;
        cfg.batch_size = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let agent = Agent::new(cfg, 3, 2, 2, &mut rng).unwrap();
        let n = 8;
        let mut r = |rows, cols| Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0));
        let batch = AgentBatch {
            states: r(n, 3),
            ks: vec![0; n],
            params: r(n, 1),
            latents: r(n, 4),
            rewards: (0..n).map(|i| i as f64 * 0.1).collect(),
            next_states: r(n, 3),
            dones: (0..n).map(|i| i % 3 == 0).collect(),
        };
        let bounds = LatentBounds::new(vec![-0.5, -1.0, 0.2, -2.0], vec![0.5, 1.0, 0.9, 1.0], 96.0).unwrap();
        (agent, batch, bounds)
    }

    #[test]
    fn targets_start_as_copies() {
        let (a, _, _) = small(Algo::Td3);
        assert_eq!(a.actor, a.actor_target);
        assert_eq!(a.critics, a.critic_targets);
        assert_eq!(a.critics.len(), 2);
        assert_eq!(small(Algo::Ddpg).0.critics.len(), 1);
    }

    #[test]
    fn zero_discount_targets_are_rewards() {
        let (mut a, batch, bounds) = small(Algo::Td3);
        a.config.gamma = 0.0;
        let y = a.td_targets(&batch, &bounds, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(y, batch.rewards);
    }

    #[test]
    fn twin_target_is_below_each_single_target() {
        let (a, batch, bounds) = small(Algo::Td3);
        let y = a.td_targets(&batch, &bounds, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for j in 0..2 {
            let mut single = a.clone();
            single.critic_targets = vec![a.critic_targets[j].clone()];
            let yj = single.td_targets(&batch, &bounds, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            assert!(y.iter().zip(&yj).all(|(a, b)| a <= b));
        }
    }

    #[test]
    fn critic_gradient_matches_finite_differences() {
        let (a, batch, bounds) = small(Algo::Td3);
        let y = a.td_targets(&batch, &bounds, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let inputs = Agent::critic_inputs(batch.states.view(), batch.latents.view());
        let (_, g) = a.critic_gradient(&a.critics[1], inputs.view(), &y).unwrap();
        let report = finite_diff_check(&a.critics[1], &g, 1e-5, &CheckPlan::all(), |p| {
            let (loss, signature) = a.critic_objective(p, inputs.view(), &y).unwrap();
            Evaluation { loss, signature }
        })
        .unwrap();
        assert!(report.passes(1e-4), "{report:?}");
    }

    #[test]
    fn actor_gradient_matches_finite_differences() {
        let (a, batch, bounds) = small(Algo::Td3);
        let (_, g) = a.actor_gradient(&a.actor, &a.critics[0], batch.states.view(), &bounds).unwrap();
        let report = finite_diff_check(&a.actor, &g, 1e-5, &CheckPlan::all(), |p| {
            let (loss, signature) = a.actor_objective(p, &a.critics[0], batch.states.view(), &bounds).unwrap();
            Evaluation { loss, signature }
        })
        .unwrap();
        assert!(report.passes(1e-4), "{report:?}");
    }

    #[test]
    fn action_blind_critic_gives_zero_actor_gradient() {
        let (mut a, batch, bounds) = small(Algo::Td3);
        // zero the first-layer weights that read the latent action
        let w = a.critics[0].get_mut(0);
        for r in 0..w.shape()[0] {
            for c in 3..w.shape()[1] {
                w[[r, c]] = 0.0;
            }
        }
        let (_, g) = a.actor_gradient(&a.actor, &a.critics[0], batch.states.view(), &bounds).unwrap();
        assert_eq!(g.global_norm(), 0.0);
    }

    #[test]
    fn unit_soft_update_copies_live_nets() {
        let (mut a, batch, bounds) = small(Algo::Ddpg);
        a.config.tau_actor = 1.0;
        a.config.tau_critic = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        a.critic_update(&batch, &bounds, &mut rng).unwrap();
        a.actor_update(&batch, &bounds).unwrap();
        assert_eq!(a.actor, a.actor_target);
        assert_eq!(a.critics, a.critic_targets);
    }

    #[test]
    fn actor_steps_follow_the_policy_delay() {
        let (mut a, batch, bounds) = small(Algo::Td3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let steps: Vec<bool> = (0..6)
            .map(|_| a.update(&batch, &bounds, &mut rng).unwrap().actor.is_some())
            .collect();
        assert_eq!(steps, vec![false, true, false, true, false, true]);
        assert_eq!((a.critic_updates, a.actor_updates), (6, 3));
    }

    #[test]
    fn greedy_selection_is_deterministic_and_midpoint_rescaled() {
        let (mut a, _, _) = small(Algo::Td3);
        let bounds = LatentBounds::new(vec![2.0; 4], vec![4.0; 4], 96.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = [0.1, 0.2, 0.3];
        let x = a.select_latent_action(&bounds, &s, false, &mut rng).unwrap();
        assert_eq!(x, a.select_latent_action(&bounds, &s, false, &mut rng).unwrap());
        a.actor.fill(0.0);
        let mid = a.select_latent_action(&bounds, &s, false, &mut rng).unwrap();
        assert_eq!(mid.concat(), vec![3.0; 4]);
    }

    #[test]
    fn checkpoint_restores_everything() {
        let (mut a, batch, bounds) = small(Algo::Td3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..3 {
            a.update(&batch, &bounds, &mut rng).unwrap();
        }
        let mut ck = Checkpoint::new();
        a.save_into(&mut ck, "agent");
        let (mut b, _, _) = small(Algo::Td3);
        b.actor.fill(7.0);
        b.load_from(&ck, "agent").unwrap();
        assert_eq!(a, b);
    }
}
