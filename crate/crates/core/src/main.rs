use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hyar::envs::EnvId;
use hyar::harness::{evaluate, gradcheck_suite, read_config_file, HarnessError, Run, RunConfig, GRADCHECK_TOL};
use hyar::repr::write_latents;

#[derive(Parser)]
#[command(name = "hyar", version, about = "Hybrid-action representation learning lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Warm up, pre-train the representation and train the latent policy.
    Train {
        #[arg(long)]
        env: Option<String>,
        /// Actuator count (hard_move only).
        #[arg(long)]
        n: Option<usize>,
        /// hyar-td3 or hyar-ddpg.
        #[arg(long)]
        algo: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Total environment steps, warm-up included.
        #[arg(long)]
        steps: Option<u64>,
        /// Flat `section.key = value` file; flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Extra `section.key=value` override (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Greedy evaluation of a checkpoint.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        episodes: usize,
        #[arg(long)]
        seed: u64,
    },
    /// Write `[e, z]` of every stored transition as CSV.
    ExportLatents {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every network at full width.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[allow(clippy::too_many_arguments)]
fn explicit_config(
    env: Option<String>,
    n: Option<usize>,
    algo: Option<String>,
    seed: Option<u64>,
    steps: Option<u64>,
    config: Option<&Path>,
    out: Option<PathBuf>,
    set: &[String],
) -> Result<BTreeMap<String, String>, HarnessError> {
    let mut pairs = match config {
        Some(p) => read_config_file(p)?,
        None => BTreeMap::new(),
    };
    let flags = [
        ("env.id", env),
        ("env.n", n.map(|v| v.to_string())),
        ("run.algo", algo),
        ("run.seed", seed.map(|v| v.to_string())),
        ("train.total_env_steps", steps.map(|v| v.to_string())),
        ("out.dir", out.map(|p| p.display().to_string())),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            pairs.insert(k.to_string(), v);
        }
    }
    for kv in set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| HarnessError::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        pairs.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(pairs)
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Train {
            env,
            n,
            algo,
            seed,
            steps,
            config,
            out,
            resume,
            set,
        } => {
            let pairs = explicit_config(env, n, algo, seed, steps, config.as_deref(), out, &set)?;
            let mut run = match resume {
                Some(ckpt) => Run::resume(&ckpt, &pairs)?,
                None => Run::new(RunConfig::resolve(&pairs)?)?,
            };
            let summary = run.train()?;
            println!(
                "env_step={} episodes={} eval_return={} eval_success={} relabel_out_of_bounds={}",
                summary.env_step,
                summary.train_episodes,
                summary.final_eval.mean_return,
                summary.final_eval.success_rate,
                summary.relabel.out_of_bounds
            );
        }
        Command::Eval { ckpt, episodes, seed } => {
            let run = Run::load(&ckpt)?;
            let c = &run.config;
            let r = evaluate(&run.agent, run.model(), &run.bounds, c.env_id, c.env_n, episodes, seed)?;
            println!("mean_return={} success_rate={}", r.mean_return, r.success_rate);
        }
        Command::ExportLatents { ckpt, out } => {
            let run = Run::load(&ckpt)?;
            let batch = run.buffer.all_repr()?;
            let file = File::create(&out).map_err(|e| HarnessError::io(&out, e))?;
            write_latents(run.model(), &batch, BufWriter::new(file)).map_err(|e| match e {
                hyar::repr::ReprError::Io(source) => HarnessError::io(&out, source),
                other => other.into(),
            })?;
        }
        Command::Gradcheck { seed } => {
            let envs = [
                (EnvId::Platform, 0),
                (EnvId::Goal, 0),
                (EnvId::HardGoal, 0),
                (EnvId::CatchPoint, 0),
                (EnvId::HardMove, 4),
                (EnvId::Linear, 0),
            ];
            let lines = gradcheck_suite(&envs, seed)?;
            let mut failed = 0;
            for l in &lines {
                println!(
                    "{} {:<11} {:<22} max_rel_err={:.3e} raw={:.3e} checked={} kinks={}",
                    if l.passes() { "PASS" } else { "FAIL" },
                    l.env,
                    l.component,
                    l.report.max_rel_error,
                    l.report.max_raw_rel_error,
                    l.report.checked,
                    l.report.skipped_kinks
                );
                failed += !l.passes() as usize;
            }
            if failed > 0 {
                return Err(HarnessError::NumericFault(format!(
                    "{failed} components exceed relative error {GRADCHECK_TOL:e}"
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
