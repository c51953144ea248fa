use std::collections::{BTreeMap, VecDeque};
use std::path::{Path, PathBuf};

use ndarray::{concatenate, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::agent::{decode_action, relabel_batch, Agent, RelabelStats, ReplayBuffer, Transition};
use crate::envs::{env_spec, Env, EnvSpec, Environment, HybridAction};
use crate::numkit::Checkpoint;
use crate::repr::{latent_bounds, LatentBounds, ReprLoss, ReprModel, ReprTrainer};

use super::eval::{eval_seed, evaluate, random_action, EvalResult};
use super::metrics::{binary_hash, CsvLog, MetricsRow, EVAL_HEADER, METRICS_HEADER};
use super::{HarnessError, RunConfig};

const CHECKPOINT_FORMAT: &str = "hyar-run-1";
const INIT_STREAM: u64 = 0x696e_6974;
const ACT_STREAM: u64 = 0x0061_6374;
const LEARN_STREAM: u64 = 0x6c65_6172;
const TRAIN_ENV_STREAM: u64 = 0x656e_7673;
const RETURN_WINDOW: usize = 100;
/// Config keys a resumed run may change.
const RESUME_OVERRIDABLE: [&str; 3] = ["out.dir", "train.total_env_steps", "train.checkpoint_every"];

pub(crate) fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Reset seed of episode `index` in the stream rooted at `seed`.
pub fn episode_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index))
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ stream))
}

fn mean_or_nan(sum: f64, n: u64) -> f64 {
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Loop state that is not owned by a network, buffer or environment.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Counters {
    pub warmed_up: bool,
    pub env_step: u64,
    /// Episodes started, warm-up included; indexes the reset seeds.
    pub episodes_started: u64,
    /// Training-stage episodes completed.
    pub train_episodes: u64,
    pub bounds_refreshes: u64,
    /// Current observation; `None` between episodes.
    pub state: Option<Vec<f64>>,
    pub episode_return: f64,
    pub episode_success: bool,
    pub recent_returns: VecDeque<f64>,
    pub recent_successes: VecDeque<bool>,
    pub last_repr_loss: Option<(f64, f64)>,
    pub critic_updates: u64,
    pub interval_critic: (f64, u64),
    pub interval_actor: (f64, u64),
    pub interval_coverage: (u64, u64),
    pub relabel: RelabelStats,
    pub metrics_rows: Vec<String>,
    pub eval_rows: Vec<String>,
    pub last_row_step: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub env_step: u64,
    pub train_episodes: u64,
    pub critic_updates: u64,
    pub bounds_refreshes: u64,
    pub relabel: RelabelStats,
    pub final_eval: EvalResult,
}

#[derive(Debug)]
struct Outputs {
    metrics: CsvLog,
    eval: CsvLog,
}

/// Everything one training run owns.
#[derive(Debug)]
pub struct Run {
    pub config: RunConfig,
    pub spec: EnvSpec,
    pub env: Env,
    pub trainer: ReprTrainer,
    pub agent: Agent,
    pub buffer: ReplayBuffer,
    pub bounds: LatentBounds,
    pub counters: Counters,
    act_rng: ChaCha8Rng,
    learn_rng: ChaCha8Rng,
    outputs: Option<Outputs>,
}

impl Run {
    pub fn new(config: RunConfig) -> Result<Self, HarnessError> {
        config.validate()?;
        let spec = env_spec(config.env_id, config.env_n)?;
        let env = Env::new(config.env_id, config.env_n)?;
        let mut init = stream_rng(config.seed, INIT_STREAM);
        let model = ReprModel::new(&spec, config.repr, &mut init)?;
        let trainer = ReprTrainer::new(model, config.repr_train);
        let (d1, d2) = (config.repr.d1, config.repr.d2);
        let agent = Agent::new(config.agent, spec.state_dim, d1, d2, &mut init)?;
        let buffer = ReplayBuffer::new(config.agent.buffer_capacity, spec.state_dim, spec.padded_param_dim(), d1 + d2)?;
        Ok(Self {
            act_rng: stream_rng(config.seed, ACT_STREAM),
            learn_rng: stream_rng(config.seed, LEARN_STREAM),
            bounds: LatentBounds::unit(d1 + d2),
            counters: Counters::default(),
            outputs: None,
            config,
            spec,
            env,
            trainer,
            agent,
            buffer,
        })
    }

    pub fn model(&self) -> &ReprModel {
        &self.trainer.model
    }

    fn train_env_seed(&self) -> u64 {
        episode_seed(splitmix64(self.config.seed ^ TRAIN_ENV_STREAM), self.counters.episodes_started)
    }

    fn current_state(&mut self) -> Vec<f64> {
        if let Some(s) = &self.counters.state {
            return s.clone();
        }
        let s = self.env.reset(self.train_env_seed());
        self.counters.episodes_started += 1;
        self.counters.episode_return = 0.0;
        self.counters.episode_success = false;
        self.counters.state = Some(s.clone());
        s
    }

    fn padded(&self, a: &HybridAction) -> Vec<f64> {
        let mut x = vec![0.0; self.spec.padded_param_dim()];
        x[..a.x.len()].copy_from_slice(&a.x);
        x
    }

    /// Executes `a` from `s`, stores the transition and returns whether the
    /// episode ended.
    fn act(&mut self, s: Vec<f64>, a: &HybridAction, latent: Vec<f64>) -> Result<bool, HarnessError> {
        let r = self.env.step(a)?;
        let x = self.padded(a);
        self.buffer.push(&Transition {
            s,
            k: a.k,
            x,
            latent,
            r: r.reward,
            s_next: r.next_state.clone(),
            done: r.terminal(),
        })?;
        self.counters.env_step += 1;
        self.counters.episode_return += r.reward;
        self.counters.episode_success |= r.success;
        self.counters.state = if r.done { None } else { Some(r.next_state) };
        Ok(r.done)
    }

    fn repr_batch(&mut self) -> Result<ReprLoss, HarnessError> {
        let idx = self.buffer.sample_indices(self.config.repr_train.batch_size, &mut self.learn_rng)?;
        let batch = self.buffer.repr_batch(&idx)?;
        let loss = self.trainer.train_batch(&batch, &mut self.learn_rng)?;
        self.counters.last_repr_loss = Some((loss.vae, loss.dynamics));
        Ok(loss)
    }

    fn refresh_bounds(&mut self) -> Result<(), HarnessError> {
        let m = self.config.lsc_samples.min(self.buffer.len());
        let idx = self.buffer.sample_indices(m, &mut self.learn_rng)?;
        let samples = self.buffer.repr_batch(&idx)?;
        self.bounds = latent_bounds(&self.trainer.model, &samples, self.config.lsc_c)?;
        self.counters.bounds_refreshes += 1;
        Ok(())
    }

    /// Random-policy collection up to the warm-up step budget.
    pub fn collect_warmup(&mut self) -> Result<(), HarnessError> {
        let latent_dim = self.config.repr.d1 + self.config.repr.d2;
        while !self.counters.warmed_up && self.counters.env_step < self.config.warmup_env_steps {
            let s = self.current_state();
            let a = random_action(&self.spec, &mut self.act_rng);
            self.act(s, &a, vec![0.0; latent_dim])?;
        }
        Ok(())
    }

    /// Random-policy collection, representation pre-training, latent fill of
    /// the warm-up transitions and the first bounds.
    pub fn warmup(&mut self) -> Result<(), HarnessError> {
        if self.counters.warmed_up {
            return Ok(());
        }
        self.collect_warmup()?;
        if self.buffer.len() < self.config.agent.batch_size.max(self.config.repr_train.batch_size) {
            return Err(HarnessError::Config(format!(
                "warm-up stored {} transitions, fewer than one batch",
                self.buffer.len()
            )));
        }
        let mut first = None;
        for _ in 0..self.config.pretrain_batches {
            let loss = self.repr_batch()?;
            first.get_or_insert(loss);
        }
        if let (Some(f), Some((vae, dynamics))) = (first, self.counters.last_repr_loss) {
            log::info!(
                "pre-training: vae {:.4} -> {vae:.4}, dynamics {:.4} -> {dynamics:.4}",
                f.vae,
                f.dynamics
            );
        }
        self.fill_warmup_latents()?;
        self.refresh_bounds()?;
        // the partial random episode is abandoned; training starts fresh
        self.counters.state = None;
        self.counters.warmed_up = true;
        Ok(())
    }

    /// Stores `[table row of k, encoder mean]` as the latent of every
    /// transition collected so far.
    fn fill_warmup_latents(&mut self) -> Result<(), HarnessError> {
        let all = self.buffer.all_repr()?;
        let model = &self.trainer.model;
        let e = model.embed_rows(&all.ks)?;
        let (mu, _) = model.encode_batch(all.states.view(), e.view(), all.params.view(), &all.ks)?;
        let latents = concatenate![Axis(1), e, mu];
        for (i, row) in latents.rows().into_iter().enumerate() {
            self.buffer.set_latent(i, &row.to_vec())?;
        }
        Ok(())
    }

    fn train_step(&mut self) -> Result<(), HarnessError> {
        let s = self.current_state();
        let latent = self.agent.select_latent_action(&self.bounds, &s, true, &mut self.act_rng)?;
        let flat = latent.concat();
        let cov = &mut self.counters.interval_coverage;
        cov.0 += self.bounds.strictly_contains(&flat) as u64;
        cov.1 += 1;
        let a = decode_action(&self.trainer.model, &s, &latent)?;
        let done = self.act(s, &a, flat)?;

        let batch_size = self.config.agent.batch_size;
        if self.buffer.len() >= batch_size {
            let mut batch = self.buffer.sample(batch_size, &mut self.learn_rng)?;
            let moving = self.trainer.moving_dyn_loss.unwrap_or(f64::INFINITY);
            relabel_batch(
                &self.trainer.model,
                &mut batch,
                moving,
                Some(&self.bounds),
                &self.agent.config,
                &mut self.learn_rng,
                &mut self.counters.relabel,
            )?;
            let losses = self.agent.update(&batch, &self.bounds, &mut self.learn_rng)?;
            self.counters.critic_updates += 1;
            self.counters.interval_critic.0 += losses.critic;
            self.counters.interval_critic.1 += 1;
            if let Some(l) = losses.actor {
                self.counters.interval_actor.0 += l;
                self.counters.interval_actor.1 += 1;
            }
        }

        if done {
            let c = &mut self.counters;
            c.train_episodes += 1;
            c.recent_returns.push_back(c.episode_return);
            c.recent_successes.push_back(c.episode_success);
            if c.recent_returns.len() > RETURN_WINDOW {
                c.recent_returns.pop_front();
                c.recent_successes.pop_front();
            }
            if c.train_episodes % self.config.repr_every_episodes == 0 {
                for _ in 0..self.config.repr_periodic_batches {
                    self.repr_batch()?;
                }
                self.refresh_bounds()?;
            }
        }
        Ok(())
    }

    pub fn evaluate_now(&self) -> Result<EvalResult, HarnessError> {
        evaluate(
            &self.agent,
            &self.trainer.model,
            &self.bounds,
            self.config.env_id,
            self.config.env_n,
            self.config.eval_episodes,
            eval_seed(self.config.seed),
        )
    }

    fn metrics_row(&self) -> MetricsRow {
        let c = &self.counters;
        let n = c.recent_returns.len() as u64;
        let (vae, dynamics) = c.last_repr_loss.unwrap_or((f64::NAN, f64::NAN));
        MetricsRow {
            env_step: c.env_step,
            episode: c.train_episodes,
            return_ma100: mean_or_nan(c.recent_returns.iter().sum(), n),
            success_ma100: mean_or_nan(c.recent_successes.iter().filter(|&&s| s).count() as f64, n),
            loss_vae: vae,
            loss_dyn: dynamics,
            critic_loss: mean_or_nan(c.interval_critic.0, c.interval_critic.1),
            actor_loss: mean_or_nan(c.interval_actor.0, c.interval_actor.1),
            bound_coverage: mean_or_nan(c.interval_coverage.0 as f64, c.interval_coverage.1),
        }
    }

    fn record_row(&mut self) -> Result<EvalResult, HarnessError> {
        let row = self.metrics_row().to_csv();
        let ev = self.evaluate_now()?;
        let eval_row = format!("{},{},{}", self.counters.env_step, ev.mean_return, ev.success_rate);
        if let Some(out) = &self.outputs {
            out.metrics.append(&row)?;
            out.eval.append(&eval_row)?;
        }
        log::info!(
            "step {} episodes {} eval return {:.3} success {:.3}",
            self.counters.env_step,
            self.counters.train_episodes,
            ev.mean_return,
            ev.success_rate
        );
        let c = &mut self.counters;
        c.metrics_rows.push(row);
        c.eval_rows.push(eval_row);
        c.last_row_step = Some(c.env_step);
        c.interval_critic = (0.0, 0);
        c.interval_actor = (0.0, 0);
        c.interval_coverage = (0, 0);
        Ok(ev)
    }

    /// Creates the output directory, manifest and CSV files (rewriting rows
    /// already recorded when resuming).
    fn open_outputs(&mut self) -> Result<(), HarnessError> {
        let dir = self.config.out_dir.clone();
        std::fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
        let mut manifest = self.config.to_text();
        manifest.push_str(&format!("binary.hash = {}\n", binary_hash()?));
        let mpath = dir.join("manifest.txt");
        std::fs::write(&mpath, manifest).map_err(|e| HarnessError::io(&mpath, e))?;
        self.outputs = Some(Outputs {
            metrics: CsvLog::create(&dir.join("metrics.csv"), METRICS_HEADER, &self.counters.metrics_rows)?,
            eval: CsvLog::create(&dir.join("eval.csv"), EVAL_HEADER, &self.counters.eval_rows)?,
        });
        Ok(())
    }

    fn run_loop(&mut self) -> Result<EvalResult, HarnessError> {
        if !self.counters.warmed_up {
            self.warmup()?;
            self.record_row()?;
        }
        let total = self.config.total_env_steps;
        let mut last = None;
        while self.counters.env_step < total {
            self.train_step()?;
            let step = self.counters.env_step;
            if step % self.config.eval_interval == 0 || step == total {
                last = Some(self.record_row()?);
            }
            let every = self.config.checkpoint_every;
            if every > 0 && step % every == 0 && step < total {
                self.save(&self.config.out_dir.join(format!("step_{step}.ckpt")))?;
            }
        }
        match last {
            Some(ev) => Ok(ev),
            None => self.evaluate_now(),
        }
    }

    /// Runs warm-up (if not done yet) and training to the step budget,
    /// writing metrics, evaluations and checkpoints under `out.dir`. On a
    /// fault the current state is saved to `fault.ckpt` before returning.
    pub fn train(&mut self) -> Result<RunSummary, HarnessError> {
        self.open_outputs()?;
        let final_eval = match self.run_loop() {
            Ok(ev) => ev,
            Err(e) => {
                log::error!("run aborted at env step {}: {e}", self.counters.env_step);
                let path = self.config.out_dir.join("fault.ckpt");
                if let Err(save_err) = self.save(&path) {
                    log::error!("could not save {}: {save_err}", path.display());
                }
                return Err(e);
            }
        };
        self.save(&self.config.out_dir.join("final.ckpt"))?;
        let c = &self.counters;
        Ok(RunSummary {
            env_step: c.env_step,
            train_episodes: c.train_episodes,
            critic_updates: c.critic_updates,
            bounds_refreshes: c.bounds_refreshes,
            relabel: c.relabel,
            final_eval,
        })
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint, HarnessError> {
        let mut ck = Checkpoint::new();
        ck.set_meta("format", CHECKPOINT_FORMAT);
        ck.set_meta("config", json(&self.config)?);
        ck.set_meta("counters", json(&self.counters)?);
        ck.set_meta("env", json(&self.env)?);
        ck.set_meta("bounds", json(&self.bounds)?);
        ck.set_meta("rng.act", json(&self.act_rng)?);
        ck.set_meta("rng.learn", json(&self.learn_rng)?);
        let t = &self.trainer;
        ck.set_meta("repr.moving_dyn_loss", json(&t.moving_dyn_loss)?);
        ck.set_meta("repr.updates", t.updates.to_string());
        ck.set_meta("repr.adam_t", t.adam.t.to_string());
        ck.push_params("repr", t.model.params());
        ck.push_params("repr.adam_m", &t.adam.m);
        ck.push_params("repr.adam_v", &t.adam.v);
        self.agent.save_into(&mut ck, "agent");
        self.buffer.save_into(&mut ck, "buffer");
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        self.to_checkpoint()?.save(path).map_err(|e| match e {
            crate::numkit::NumError::Io(source) => HarnessError::io(path, source),
            other => other.into(),
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, HarnessError> {
        if ck.meta("format")? != CHECKPOINT_FORMAT {
            return Err(HarnessError::Format(format!("unknown checkpoint format {:?}", ck.meta("format")?)));
        }
        let config: RunConfig = from_json(ck, "config")?;
        let mut run = Self::new(config)?;
        run.counters = from_json(ck, "counters")?;
        run.env = from_json(ck, "env")?;
        run.bounds = from_json(ck, "bounds")?;
        run.act_rng = from_json(ck, "rng.act")?;
        run.learn_rng = from_json(ck, "rng.learn")?;
        let t = &mut run.trainer;
        t.moving_dyn_loss = from_json(ck, "repr.moving_dyn_loss")?;
        t.updates = parse_meta(ck, "repr.updates")?;
        t.adam.t = parse_meta(ck, "repr.adam_t")?;
        ck.load_params("repr", t.model.params_mut())?;
        ck.load_params("repr.adam_m", &mut t.adam.m)?;
        ck.load_params("repr.adam_v", &mut t.adam.v)?;
        run.agent.load_from(ck, "agent")?;
        run.buffer = ReplayBuffer::load_from(ck, "buffer")?;
        Ok(run)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let ck = Checkpoint::load(path).map_err(|e| match e {
            crate::numkit::NumError::Io(source) => HarnessError::io(path, source),
            other => other.into(),
        })?;
        Self::from_checkpoint(&ck)
    }

    /// Loads a checkpoint for continued training; only the output directory,
    /// the step budget and the checkpoint cadence may take new values.
    pub fn resume(path: &Path, overrides: &BTreeMap<String, String>) -> Result<Self, HarnessError> {
        let mut run = Self::load(path)?;
        for (k, v) in overrides {
            let mut probe = run.config.clone();
            probe.set(k, v)?;
            if probe != run.config && !RESUME_OVERRIDABLE.contains(&k.as_str()) {
                return Err(HarnessError::Config(format!("{k} cannot change when resuming")));
            }
            run.config = probe;
        }
        run.config.validate()?;
        if !run.counters.warmed_up {
            return Err(HarnessError::Config("checkpoint was taken before warm-up finished".into()));
        }
        Ok(run)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.config.out_dir.clone()
    }
}

fn json<T: Serialize>(v: &T) -> Result<String, HarnessError> {
    serde_json::to_string(v).map_err(|e| HarnessError::Internal(format!("serialize: {e}")))
}

fn from_json<T: DeserializeOwned>(ck: &Checkpoint, key: &str) -> Result<T, HarnessError> {
    serde_json::from_str(ck.meta(key)?).map_err(|e| HarnessError::Format(format!("checkpoint meta {key}: {e}")))
}

fn parse_meta(ck: &Checkpoint, key: &str) -> Result<u64, HarnessError> {
    let v = ck.meta(key)?;
    v.parse()
        .map_err(|_| HarnessError::Format(format!("checkpoint meta {key}: expected an integer, got {v:?}")))
}
