//! Checks shared by the integration tests and the acceptance runner. Each
//! returns a one-line detail on success and a description of the first
//! violation on failure.

#![allow(dead_code)]

use std::f64::consts::PI;

use ndarray::{Array2, Axis};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use hyar::agent::{relabel_batch, Agent, AgentBatch, AgentConfig, Algo, RelabelStats, ReplayBuffer, Transition};
use hyar::envs::{env_spec, hard_move_displacement, EnvId, EnvSpec};
use hyar::numkit::{kl_std_normal, reparam_sample};
use hyar::repr::{bounds_from_latents, nn_decode, ReprBatch, ReprConfig, ReprModel};

pub type Outcome = Result<String, String>;

/// Deterministic proptest runner, so every invocation checks the same cases.
pub fn runner(cases: u32) -> TestRunner {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn proptest_outcome(result: Result<(), proptest::test_runner::TestError<impl std::fmt::Debug>>, ok: String) -> Outcome {
    result.map(|()| ok).map_err(|e| e.to_string())
}

// ---------------------------------------------------------------------------
// oracles

/// Brute-force index of the closest row; ties keep the first index.
fn scan_oracle(table: &Array2<f64>, e: &[f64]) -> usize {
    let dists: Vec<f64> = table
        .outer_iter()
        .map(|row| row.iter().zip(e).map(|(a, b)| (a - b).powi(2)).sum())
        .collect();
    let min = dists.iter().cloned().fold(f64::INFINITY, f64::min);
    dists.iter().position(|&d| d == min).expect("non-empty table")
}

pub fn nn_decode_matches_scan(queries: usize) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let (k, d1) = (16, 6);
    let table = Array2::from_shape_fn((k, d1), |_| rng.random_range(-1.0..1.0));
    for q in 0..queries {
        let e: Vec<f64> = (0..d1).map(|_| rng.random_range(-1.5..1.5)).collect();
        let (got, want) = (nn_decode(table.view(), &e), scan_oracle(&table, &e));
        if got != want {
            return Err(format!("query {q}: nn_decode {got}, scan {want}"));
        }
    }
    Ok(format!("{queries} queries, K={k}"))
}

/// Displacement summed bit by bit over all `n` actuators.
fn displacement_oracle(n: usize, mask: usize, x: &[f64]) -> [f64; 2] {
    let mut d = [0.0; 2];
    for (i, &xi) in x.iter().enumerate().take(n) {
        if (mask >> i) & 1 == 1 {
            let phi = 2.0 * PI * i as f64 / n as f64;
            d[0] += xi * 0.05 * phi.cos();
            d[1] += xi * 0.05 * phi.sin();
        }
    }
    d
}

fn displacement_agrees(n: usize, mask: usize, x: &[f64]) -> Result<(), String> {
    let (got, want) = (hard_move_displacement(n, mask, x), displacement_oracle(n, mask, x));
    let err = (got[0] - want[0]).abs().max((got[1] - want[1]).abs());
    if err > 1e-15 {
        return Err(format!("n={n} mask={mask:#b}: {got:?} vs oracle {want:?}"));
    }
    Ok(())
}

/// Every mask for `n ≤ max_exhaustive`, then `random_masks` masks at `n = 10`.
pub fn hard_move_matches_oracle(max_exhaustive: usize, random_masks: usize) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut checked = 0;
    for n in 1..=max_exhaustive {
        for mask in 0..1usize << n {
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
            displacement_agrees(n, mask, &x)?;
            checked += 1;
        }
    }
    for _ in 0..random_masks {
        let mask = rng.random_range(0..1usize << 10);
        let x: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..=1.0)).collect();
        displacement_agrees(10, mask, &x)?;
        checked += 1;
    }
    Ok(format!("{checked} masks"))
}

fn log_normal_density(z: &[f64], mu: &[f64], std: &[f64]) -> f64 {
    z.iter()
        .zip(mu.iter().zip(std))
        .map(|(&z, (&m, &s))| -0.5 * ((z - m) / s).powi(2) - s.ln() - 0.5 * (2.0 * PI).ln())
        .sum()
}

/// Monte-Carlo `E_q[log q − log p]` against the closed form.
pub fn kl_matches_monte_carlo(samples: usize, tol: f64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let d = 6;
    let mu: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let log_std: Vec<f64> = (0..d).map(|_| rng.random_range(-0.7..0.3)).collect();
    let std: Vec<f64> = log_std.iter().map(|v| v.exp()).collect();
    let zeros = vec![0.0; d];
    let ones = vec![1.0; d];
    let mut sum = 0.0;
    let mut z = vec![0.0; d];
    for _ in 0..samples {
        for j in 0..d {
            let eps: f64 = rng.sample(StandardNormal);
            z[j] = mu[j] + std[j] * eps;
        }
        sum += log_normal_density(&z, &mu, &std) - log_normal_density(&z, &zeros, &ones);
    }
    let mc = sum / samples as f64;
    let exact = kl_std_normal(&mu, &log_std).map_err(|e| e.to_string())?;
    let err = (mc - exact).abs();
    let detail = format!("closed form {exact:.5}, Monte-Carlo {mc:.5}, |diff| {err:.2e} (tol {tol:e})");
    if err < tol {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Sample mean and std of `reparam_sample` within 1% of `(mu, exp(log_std))`.
pub fn reparam_matches_moments(samples: usize) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(91);
    let (mu, log_std) = (0.7, -0.4);
    let mus = Array2::from_elem((samples, 1), mu);
    let ls = Array2::from_elem((samples, 1), log_std);
    let noise = Array2::from_shape_fn((samples, 1), |_| rng.sample(StandardNormal));
    let z = reparam_sample(mus.view(), ls.view(), noise.view()).map_err(|e| e.to_string())?;
    let mean = z.mean().expect("non-empty");
    let sd = z.std(0.0);
    let (mean_err, sd_err) = ((mean - mu).abs() / mu, (sd - f64::exp(log_std)).abs() / f64::exp(log_std));
    let detail = format!("relative errors: mean {mean_err:.2e}, std {sd_err:.2e}");
    if mean_err < 0.01 && sd_err < 0.01 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Index frequencies of buffer sampling within 3σ of uniform, plus a
/// chi-square statistic below the 0.999 quantile for 9 degrees of freedom.
pub fn buffer_sampling_is_uniform(draws: usize) -> Outcome {
    let items = 10;
    let mut buf = ReplayBuffer::new(items, 1, 1, 1).map_err(|e| e.to_string())?;
    for i in 0..items {
        let t = Transition {
            s: vec![i as f64],
            k: 0,
            x: vec![0.0],
            latent: vec![0.0],
            r: 0.0,
            s_next: vec![0.0],
            done: false,
        };
        buf.push(&t).map_err(|e| e.to_string())?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut counts = vec![0usize; items];
    for _ in 0..draws / items {
        for i in buf.sample_indices(items, &mut rng).map_err(|e| e.to_string())? {
            counts[i] += 1;
        }
    }
    let draws = draws / items * items;
    let p = 1.0 / items as f64;
    let expected = draws as f64 * p;
    let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
    if let Some((i, &c)) = counts.iter().enumerate().find(|(_, &c)| (c as f64 - expected).abs() > 3.0 * sigma) {
        return Err(format!("index {i} drawn {c} times, expected {expected} ± {:.1}", 3.0 * sigma));
    }
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    const CHI2_9_999: f64 = 27.877;
    if chi2 > CHI2_9_999 {
        return Err(format!("chi-square {chi2:.2} above {CHI2_9_999}"));
    }
    Ok(format!("{draws} draws, chi-square {chi2:.2}"))
}

// ---------------------------------------------------------------------------
// invariants

/// Environments covering every action-space shape, largest table included.
pub fn spec_cases() -> Vec<(EnvId, usize)> {
    vec![
        (EnvId::Platform, 0),
        (EnvId::Goal, 0),
        (EnvId::HardGoal, 0),
        (EnvId::CatchPoint, 0),
        (EnvId::HardMove, 4),
        (EnvId::HardMove, 8),
        (EnvId::Linear, 0),
    ]
}

fn small_config() -> ReprConfig {
    ReprConfig {
        d1: 6,
        d2: 6,
        hidden: 32,
    }
}

fn model_for(env: EnvId, n: usize, seed: u64) -> (EnvSpec, ReprModel) {
    let spec = env_spec(env, n).expect("known env");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = ReprModel::new(&spec, small_config(), &mut rng).expect("valid config");
    model.repair_table(&mut rng);
    (spec, model)
}

fn random_repr_batch(spec: &EnvSpec, n: usize, rng: &mut ChaCha8Rng) -> ReprBatch {
    let ks: Vec<usize> = (0..n).map(|_| rng.random_range(0..spec.num_actions)).collect();
    let params = Array2::from_shape_fn((n, spec.padded_param_dim()), |(i, j)| {
        if j < spec.param_dims[ks[i]] {
            rng.random_range(-1.0..1.0)
        } else {
            0.0
        }
    });
    let states = Array2::from_shape_fn((n, spec.state_dim), |_| rng.random_range(-1.0..1.0));
    let next = Array2::from_shape_fn((n, spec.state_dim), |_| rng.random_range(-1.0..1.0));
    ReprBatch::new(states, ks, params, next).expect("consistent batch")
}

fn case_strategy() -> impl Strategy<Value = ((EnvId, usize), u64)> {
    (prop::sample::select(spec_cases()), any::<u64>())
}

pub fn embedding_roundtrip(cases: u32) -> Outcome {
    let r = runner(cases).run(&case_strategy(), |((env, n), seed)| {
        let (spec, model) = model_for(env, n, seed);
        for k in 0..spec.num_actions {
            let e = model.embed_lookup(k).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(model.nn_decode(&e), k);
        }
        Ok(())
    });
    proptest_outcome(r, format!("{cases} random tables, every k"))
}

fn dataset_strategy() -> impl Strategy<Value = (Vec<Vec<f64>>, f64, f64)> {
    (1usize..5, 1usize..60).prop_flat_map(|(dims, rows)| {
        (
            prop::collection::vec(prop::collection::vec(-50.0f64..50.0, dims), rows),
            0.5f64..100.0,
            0.5f64..100.0,
        )
    })
}

fn to_matrix(rows: &[Vec<f64>]) -> Array2<f64> {
    Array2::from_shape_fn((rows.len(), rows[0].len()), |(i, j)| rows[i][j])
}

pub fn lsc_nesting(cases: u32) -> Outcome {
    let r = runner(cases).run(&dataset_strategy(), |(rows, a, b)| {
        let (c1, c2) = if a <= b { (a, b) } else { (b, a) };
        let m = to_matrix(&rows);
        let narrow = bounds_from_latents(m.view(), c1).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let wide = bounds_from_latents(m.view(), c2).map_err(|e| TestCaseError::fail(e.to_string()))?;
        for j in 0..m.ncols() {
            prop_assert!(wide.lower[j] <= narrow.lower[j] && narrow.upper[j] <= wide.upper[j]);
        }
        Ok(())
    });
    proptest_outcome(r, format!("{cases} random datasets"))
}

pub fn full_range_is_min_max(cases: u32) -> Outcome {
    let r = runner(cases).run(&dataset_strategy(), |(rows, _, _)| {
        let m = to_matrix(&rows);
        let b = bounds_from_latents(m.view(), 100.0).map_err(|e| TestCaseError::fail(e.to_string()))?;
        for (j, col) in m.axis_iter(Axis(1)).enumerate() {
            let min = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(b.lower[j], min);
            prop_assert_eq!(b.upper[j], max);
        }
        Ok(())
    });
    proptest_outcome(r, format!("{cases} random datasets"))
}

/// Batches whose stored `e` is anywhere in the latent box decode to their
/// stored action after relabeling, for every transition.
pub fn relabeled_batches_decode_to_stored_action(cases: u32) -> Outcome {
    let mut total = 0usize;
    let r = runner(cases).run(&case_strategy(), |((env, n), seed)| {
        let (spec, model) = model_for(env, n, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let rb = random_repr_batch(&spec, 32, &mut rng);
        let d = model.d1() + model.d2();
        let mut batch = AgentBatch {
            states: rb.states.clone(),
            ks: rb.ks.clone(),
            params: rb.params.clone(),
            latents: Array2::from_shape_fn((32, d), |_| rng.random_range(-1.0..1.0)),
            rewards: vec![0.0; 32],
            next_states: rb.next_states.clone(),
            dones: vec![false; 32],
        };
        let config = AgentConfig::for_algo(Algo::Td3);
        let mut stats = RelabelStats::default();
        relabel_batch(&model, &mut batch, 0.0, None, &config, &mut rng, &mut stats)
            .map_err(|e| TestCaseError::fail(e.to_string()))?;
        for (i, row) in batch.latents.outer_iter().enumerate() {
            let e: Vec<f64> = row.iter().take(model.d1()).cloned().collect();
            prop_assert_eq!(model.nn_decode(&e), batch.ks[i]);
        }
        Ok(())
    });
    total += cases as usize * 32;
    proptest_outcome(r, format!("{total} relabeled transitions"))
}

/// The loss is bit-identical whatever the padded parameter dims contain.
pub fn padding_does_not_change_the_loss(cases: u32) -> Outcome {
    let r = runner(cases).run(&(case_strategy(), -5.0f64..5.0), |(((env, n), seed), junk)| {
        let (spec, model) = model_for(env, n, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch = random_repr_batch(&spec, 8, &mut rng);
        let noise = Array2::from_shape_fn((8, model.d2()), |_| rng.sample(StandardNormal));
        let mut dirty = batch.clone();
        for (i, mut row) in dirty.params.outer_iter_mut().enumerate() {
            for j in spec.param_dims[batch.ks[i]]..row.len() {
                row[j] = junk + j as f64;
            }
        }
        let fail = |e: hyar::repr::ReprError| TestCaseError::fail(e.to_string());
        let (clean, _) = model.loss(&batch, noise.view(), 10.0, 0.5).map_err(fail)?;
        let (padded, _) = model.loss(&dirty, noise.view(), 10.0, 0.5).map_err(fail)?;
        prop_assert_eq!(clean, padded);
        Ok(())
    });
    proptest_outcome(r, format!("{cases} random batches"))
}

/// `L_total = L_VAE + β·L_Dyn` and `L_VAE = recon + w·KL`, bit for bit, with
/// every term non-negative.
pub fn total_loss_decomposes_exactly(cases: u32) -> Outcome {
    let r = runner(cases).run(&(case_strategy(), 0.0f64..20.0, 0.0f64..2.0), |(((env, n), seed), beta, w)| {
        let (spec, model) = model_for(env, n, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch = random_repr_batch(&spec, 8, &mut rng);
        let noise = Array2::from_shape_fn((8, model.d2()), |_| rng.sample(StandardNormal));
        let (l, _) = model
            .loss(&batch, noise.view(), beta, w)
            .map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(l.total, l.vae + beta * l.dynamics);
        prop_assert_eq!(l.vae, l.recon + w * l.kl);
        prop_assert!(l.vae >= 0.0 && l.dynamics >= 0.0 && l.recon >= 0.0 && l.kl >= 0.0);
        Ok(())
    });
    proptest_outcome(r, format!("{cases} random (batch, β, KL weight)"))
}

/// A small agent for tests that need policy outputs.
pub fn small_agent(spec: &EnvSpec, seed: u64) -> Agent {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = AgentConfig {
        hidden: 32,
        ..AgentConfig::for_algo(Algo::Td3)
    };
    let c = small_config();
    Agent::new(config, spec.state_dim, c.d1, c.d2, &mut rng).expect("valid config")
}
