//! Experiment runner: expert training, demonstration recording, and the
//! imitation loops for all five methods. Every emitted byte is a pure
//! function of (config, seed).

use std::fs::OpenOptions;
use std::path::{Path, PathBuf};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adversarial::{
    adversarial_iteration, AdversarialConfig, Discriminator, IterationReport,
};
use crate::baselines::{bc_train, synced_iteration, tcn_train, SyncedRewarder, TripletSampler};
use crate::diffcore::{restore_params, save_params, Adam, Param};
use crate::envs::{crop_shake, ActionSpace, Env, RenderMap};
use crate::mix_seed;
use crate::models::{CategoricalMlpPolicy, GaussianMlpPolicy, Policy, TcnEncoder, ValueMlp};
use crate::rollout::{
    advantage_batch, episode, evaluate, load_demos, save_demos, DemoSet, DemoTrajectory, Modality,
    RewardStream,
};
use crate::trpo::trpo_step;

use super::config::{ExperimentConfig, HarnessMethod};
use super::HarnessError;

/// Exclusive ownership of an output directory for the duration of a run.
pub struct LockGuard {
    path: PathBuf,
}

impl LockGuard {
    pub fn acquire(dir: &Path) -> Result<Self, HarnessError> {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::Io(e.to_string()))?;
        let path = dir.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(LockGuard { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(HarnessError::LockHeld(path))
            }
            Err(e) => Err(HarnessError::Io(e.to_string())),
        }
    }
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// Final evaluation summary of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub env: String,
    pub method: HarnessMethod,
    pub n_demo_trajs: usize,
    pub eval_episodes: usize,
    pub mean_return: f64,
    pub std_return: f64,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub summary: Summary,
    pub rows: Vec<IterationReport>,
    pub policy: Policy,
    pub value: ValueMlp,
}

pub fn build_policy(env: &Env, rng: &mut ChaCha8Rng) -> Policy {
    let spec = env.spec();
    match &spec.action_space {
        ActionSpace::Discrete(n) => {
            Policy::Categorical(CategoricalMlpPolicy::new(spec.state_dim, *n, rng))
        }
        ActionSpace::Box { low, high } => Policy::Gaussian(GaussianMlpPolicy::new(
            spec.state_dim,
            low.clone(),
            high.clone(),
        rng,
        )),
    }
}

pub fn save_checkpoint(path: &Path, policy: &Policy, value: Option<&ValueMlp>) -> Result<(), HarnessError> {
    let mut params: Vec<&Param> = policy.params();
    if let Some(v) = value {
        params.extend(v.params());
    }
    save_params(path, &params)?;
    Ok(())
}

pub fn load_policy(path: &Path, env: &Env) -> Result<Policy, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut policy = build_policy(env, &mut rng);
    restore_params(path, &mut policy.params_mut())?;
    Ok(policy)
}

fn nan_row(iter: usize) -> IterationReport {
    IterationReport {
        iter,
        mean_true_return: f64::NAN,
        mean_est_reward: f64::NAN,
        disc_loss: f64::NAN,
        disc_accuracy: f64::NAN,
        kl: f64::NAN,
        surrogate_improvement: f64::NAN,
    }
}

/// Writes the per-iteration CSV log.
pub fn write_run_csv(rows: &[IterationReport], path: &Path) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::Io(e.to_string()))?;
    w.write_record([
        "iter",
        "mean_true_return",
        "mean_est_reward",
        "disc_loss",
        "disc_accuracy",
        "kl",
        "surrogate_improvement",
    ])
    .map_err(|e| HarnessError::Io(e.to_string()))?;
    for r in rows {
        w.write_record([
            r.iter.to_string(),
            fmt(r.mean_true_return),
            fmt(r.mean_est_reward),
            fmt(r.disc_loss),
            fmt(r.disc_accuracy),
            fmt(r.kl),
            fmt(r.surrogate_improvement),
        ])
        .map_err(|e| HarnessError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| HarnessError::Io(e.to_string()))?;
    Ok(())
}

pub(crate) fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

pub fn write_summary_csv(summary: &Summary, path: &Path) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::Io(e.to_string()))?;
    w.write_record([
        "env",
        "method",
        "n_demo_trajs",
        "eval_episodes",
        "mean_return",
        "std_return",
    ])
    .map_err(|e| HarnessError::Io(e.to_string()))?;
    w.write_record([
        summary.env.clone(),
        summary.method.as_str().to_string(),
        summary.n_demo_trajs.to_string(),
        summary.eval_episodes.to_string(),
        fmt(summary.mean_return),
        fmt(summary.std_return),
    ])
    .map_err(|e| HarnessError::Io(e.to_string()))?;
    w.flush().map_err(|e| HarnessError::Io(e.to_string()))?;
    Ok(())
}

pub fn read_summary_csv(path: &Path) -> Result<Summary, HarnessError> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    let record = r
        .records()
        .next()
        .ok_or_else(|| HarnessError::MissingSummary(path.to_path_buf()))?
        .map_err(|e| HarnessError::Io(e.to_string()))?;
    let parse_f = |s: &str| s.parse::<f64>().map_err(|e| HarnessError::Io(e.to_string()));
    Ok(Summary {
        env: record[0].to_string(),
        method: HarnessMethod::parse(&record[1])
            .ok_or_else(|| HarnessError::Io(format!("unknown method {}", &record[1])))?,
        n_demo_trajs: record[2].parse().map_err(|e| HarnessError::Io(format!("{e}")))?,
        eval_episodes: record[3].parse().map_err(|e| HarnessError::Io(format!("{e}")))?,
        mean_return: parse_f(&record[4])?,
        std_return: parse_f(&record[5])?,
    })
}

fn persist(
    cfg: &ExperimentConfig,
    rows: &[IterationReport],
    summary: &Summary,
    policy: &Policy,
    value: Option<&ValueMlp>,
) -> Result<(), HarnessError> {
    if let Some(dir) = &cfg.out_dir {
        cfg.save(&dir.join("config.json"))?;
        write_run_csv(rows, &dir.join("run.csv"))?;
        write_summary_csv(summary, &dir.join("summary.csv"))?;
        save_checkpoint(&dir.join("policy.vgnp"), policy, value)?;
    }
    Ok(())
}

/// Shared iteration-loop skeleton: periodic deterministic evaluation every
/// `eval_every` iterations plus optional early stop at `target_return`.
struct EvalTracker<'a> {
    cfg: &'a ExperimentConfig,
    env: &'a Env,
    best: f64,
}

impl<'a> EvalTracker<'a> {
    fn new(cfg: &'a ExperimentConfig, env: &'a Env) -> Self {
        EvalTracker {
            cfg,
            env,
            best: f64::NEG_INFINITY,
        }
    }

    /// Returns true when training should stop early.
    fn maybe_eval(&mut self, iter: usize, policy: &Policy) -> Result<bool, HarnessError> {
        if (iter + 1) % self.cfg.eval_every != 0 {
            return Ok(false);
        }
        let (mean, _) = evaluate(
            policy,
            self.env,
            5,
            mix_seed(self.cfg.seed, 0xE0A0_0000 + iter as u64),
        )?;
        if mean > self.best {
            self.best = mean;
        }
        Ok(self.cfg.target_return.is_some_and(|t| mean >= t))
    }
}

fn final_summary(
    cfg: &ExperimentConfig,
    env: &Env,
    policy: &Policy,
    n_demo_trajs: usize,
) -> Result<Summary, HarnessError> {
    let (mean, std) = evaluate(
        policy,
        env,
        cfg.eval_episodes,
        mix_seed(cfg.seed, 0xF17A_1EA1),
    )?;
    Ok(Summary {
        env: cfg.env.clone(),
        method: cfg.method,
        n_demo_trajs,
        eval_episodes: cfg.eval_episodes,
        mean_return: mean,
        std_return: std,
    })
}

/// TRPO on the true reward (the expert used by every imitation method).
pub fn train_expert(cfg: &ExperimentConfig) -> Result<RunOutcome, HarnessError> {
    cfg.validate()?;
    let env = Env::by_name(&cfg.env)?;
    let _lock = cfg.out_dir.as_deref().map(LockGuard::acquire).transpose()?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0xB01D));
    let mut policy = build_policy(&env, &mut rng);
    let mut value = ValueMlp::new(env.spec().state_dim, &mut rng);
    let gamma = env.spec().gamma;
    let mut rows = Vec::new();
    let mut tracker = EvalTracker::new(cfg, &env);
    for iter in 0..cfg.iterations {
        let trajs = crate::rollout::collect(
            &policy,
            &env,
            None,
            cfg.batch_steps,
            cfg.workers,
            mix_seed(cfg.seed, 0xC011_0000 + iter as u64),
        )?;
        let batch = advantage_batch(&trajs, &value, gamma, 0.95, RewardStream::True)?;
        let report = trpo_step(&mut policy, &mut value, &batch, &cfg.trpo)?;
        rows.push(IterationReport {
            iter,
            mean_true_return: trajs.iter().map(|t| t.true_return()).sum::<f64>()
                / trajs.len() as f64,
            mean_est_reward: f64::NAN,
            disc_loss: f64::NAN,
            disc_accuracy: f64::NAN,
            kl: report.achieved_kl,
            surrogate_improvement: report.surrogate_improvement,
        });
        if tracker.maybe_eval(iter, &policy)? {
            break;
        }
    }
    let summary = final_summary(cfg, &env, &policy, 0)?;
    persist(cfg, &rows, &summary, &policy, Some(&value))?;
    Ok(RunOutcome {
        summary,
        rows,
        policy,
        value,
    })
}

/// Records whole episodes from a trained policy in the requested modality.
pub fn record_demos(
    policy: &Policy,
    env: &Env,
    modality: Modality,
    n_trajs: usize,
    render: &RenderMap,
    seed: u64,
) -> Result<DemoSet, HarnessError> {
    let spec = env.spec();
    let mut trajectories = Vec::with_capacity(n_trajs);
    for e in 0..n_trajs {
        let render_opt = (modality == Modality::Frames).then_some(render);
        let traj = episode(policy, env, render_opt, e, mix_seed(seed, e as u64))?;
        let mut demo = DemoTrajectory::default();
        match modality {
            Modality::StateAction => {
                demo.states = traj.states;
                demo.actions = traj.actions;
                demo.log_probs = traj.log_probs;
            }
            Modality::StateOnly => {
                demo.states = traj.states;
            }
            Modality::Frames => {
                let mut frames = traj.frames.unwrap();
                if render.crop_shake_max > 0.0 {
                    let mut shake_rng =
                        ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x5AC0_0000 + e as u64));
                    for f in frames.iter_mut() {
                        *f = crop_shake(f, render.crop_shake_max, &mut shake_rng)?;
                    }
                }
                demo.frames = frames;
            }
        }
        trajectories.push(demo);
    }
    let action_dim = match &spec.action_space {
        ActionSpace::Discrete(_) => 1,
        ActionSpace::Box { low, .. } => low.len(),
    };
    let demos = DemoSet {
        env_id: spec.id.as_str().to_string(),
        modality,
        state_dim: if modality == Modality::Frames { 0 } else { spec.state_dim },
        action_dim: if modality == Modality::StateAction { action_dim } else { 0 },
        frame_width: if modality == Modality::Frames { render.width } else { 0 },
        frame_height: if modality == Modality::Frames { render.height } else { 0 },
        frame_channels: if modality == Modality::Frames { render.channels } else { 0 },
        trajectories,
    };
    demos.validate().map_err(crate::rollout::RolloutError::Demo)?;
    Ok(demos)
}

pub fn record_demos_to_file(
    checkpoint: &Path,
    env_name: &str,
    modality: Modality,
    n_trajs: usize,
    render: &RenderMap,
    seed: u64,
    out: &Path,
) -> Result<DemoSet, HarnessError> {
    let env = Env::by_name(env_name)?;
    let policy = load_policy(checkpoint, &env)?;
    let demos = record_demos(&policy, &env, modality, n_trajs, render, seed)?;
    save_demos(&demos, out).map_err(crate::rollout::RolloutError::Demo)?;
    Ok(demos)
}

/// Validates that the demo set can drive the configured method before any
/// compute is spent.
fn check_demos(cfg: &ExperimentConfig, demos: &DemoSet) -> Result<(), HarnessError> {
    if !cfg.method.accepts_modality(demos.modality) {
        return Err(HarnessError::Modality(format!(
            "method {} cannot use {} demos",
            cfg.method.as_str(),
            demos.modality.as_str()
        )));
    }
    if demos.modality == Modality::Frames {
        if demos.frame_width != cfg.render.width
            || demos.frame_height != cfg.render.height
            || demos.frame_channels != cfg.render.channels
        {
            return Err(HarnessError::Modality(format!(
                "demo frames are {}x{}x{} but the render map produces {}x{}x{}",
                demos.frame_width,
                demos.frame_height,
                demos.frame_channels,
                cfg.render.width,
                cfg.render.height,
                cfg.render.channels
            )));
        }
    } else if demos.env_id != cfg.env {
        return Err(HarnessError::Modality(format!(
            "demos were recorded on {} but the config targets {}",
            demos.env_id, cfg.env
        )));
    }
    Ok(())
}

/// Runs the configured imitation method against a demonstration set.
pub fn imitate(cfg: &ExperimentConfig) -> Result<RunOutcome, HarnessError> {
    cfg.validate()?;
    if cfg.method == HarnessMethod::ExpertTrpo {
        return Err(HarnessError::Config {
            field: "method".into(),
            message: "expert_trpo runs through train-expert".into(),
        });
    }
    let env = Env::by_name(&cfg.env)?;
    let demos = load_demos(cfg.demo_path.as_ref().unwrap())
        .map_err(crate::rollout::RolloutError::Demo)?;
    check_demos(cfg, &demos)?;
    imitate_with(cfg, &env, &demos)
}

/// Same as [`imitate`] but with a preloaded demo set (used by tests).
pub fn imitate_with(
    cfg: &ExperimentConfig,
    env: &Env,
    demos: &DemoSet,
) -> Result<RunOutcome, HarnessError> {
    check_demos(cfg, demos)?;
    let _lock = cfg.out_dir.as_deref().map(LockGuard::acquire).transpose()?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0x1417));
    let mut policy = build_policy(env, &mut rng);
    let mut value = ValueMlp::new(env.spec().state_dim, &mut rng);
    let mut rows = Vec::new();
    let mut tracker = EvalTracker::new(cfg, env);
    let n_demo_trajs = demos.trajectories.len();

    match cfg.method {
        HarnessMethod::Bc => {
            let chunks = 10usize;
            let per_chunk = cfg.baseline.bc_epochs.div_ceil(chunks).max(1);
            let mut done = 0;
            while done < cfg.baseline.bc_epochs {
                let n = per_chunk.min(cfg.baseline.bc_epochs - done);
                let curve = bc_train(&mut policy, demos, n, cfg.baseline.bc_learning_rate)?;
                done += n;
                let mut row = nan_row(done);
                row.mean_est_reward = -curve.last().copied().unwrap_or(f64::NAN);
                let (mean, _) = evaluate(
                    &policy,
                    env,
                    5,
                    mix_seed(cfg.seed, 0xE0A0_0000 + done as u64),
                )?;
                row.mean_true_return = mean;
                rows.push(row);
            }
        }
        HarnessMethod::Gail | HarnessMethod::Sigan | HarnessMethod::Vigan => {
            let method = cfg.method.adversarial().unwrap();
            let adv_cfg = AdversarialConfig {
                method,
                ..cfg.adversarial.clone()
            };
            let needs_render = method == crate::adversarial::Method::Vigan;
            let render = needs_render.then_some(&cfg.render);
            let mut disc = Discriminator::for_method(
                method,
                env,
                render,
                adv_cfg.k_frames,
                &mut rng,
            );
            let mut adam = Adam::new(adv_cfg.disc_learning_rate);
            for iter in 0..cfg.iterations {
                let report = adversarial_iteration(
                    &mut policy,
                    &mut value,
                    &mut disc,
                    &mut adam,
                    env,
                    render,
                    demos,
                    &adv_cfg,
                    &cfg.trpo,
                    cfg.batch_steps,
                    cfg.workers,
                    cfg.seed,
                    iter,
                )?;
                rows.push(report);
                if tracker.maybe_eval(iter, &policy)? {
                    break;
                }
            }
        }
        HarnessMethod::Pixel => {
            let rewarder = SyncedRewarder::pixel(demos)?;
            for iter in 0..cfg.iterations {
                let report = synced_iteration(
                    &mut policy,
                    &mut value,
                    env,
                    &cfg.render,
                    &rewarder,
                    None,
                    &cfg.trpo,
                    cfg.batch_steps,
                    cfg.workers,
                    cfg.seed,
                    iter,
                )?;
                rows.push(report);
                if tracker.maybe_eval(iter, &policy)? {
                    break;
                }
            }
        }
        HarnessMethod::Tcn => {
            let mut encoder = TcnEncoder::new(
                cfg.render.channels,
                cfg.render.height,
                cfg.render.width,
                &mut rng,
            );
            let mut pool: Vec<Vec<crate::envs::Frame>> = demos
                .trajectories
                .iter()
                .map(|t| t.frames.clone())
                .collect();
            if cfg.baseline.tcn_include_agent_frames {
                let trajs = crate::rollout::collect(
                    &policy,
                    env,
                    Some(&cfg.render),
                    cfg.batch_steps,
                    cfg.workers,
                    mix_seed(cfg.seed, 0x7C4F),
                )?;
                pool.extend(trajs.into_iter().filter_map(|t| t.frames));
            }
            let sampler = TripletSampler::new(
                cfg.baseline.triplet_pos_window,
                cfg.baseline.triplet_neg_margin,
                cfg.baseline.triplet_margin,
            );
            let mut tcn_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0x7C40));
            tcn_train(
                &mut encoder,
                &pool,
                sampler,
                cfg.baseline.tcn_epochs,
                cfg.baseline.tcn_batch_size,
                cfg.baseline.tcn_learning_rate,
                &mut tcn_rng,
            )?;
            let rewarder = SyncedRewarder::tcn(&encoder, demos)?;
            for iter in 0..cfg.iterations {
                let report = synced_iteration(
                    &mut policy,
                    &mut value,
                    env,
                    &cfg.render,
                    &rewarder,
                    Some(&encoder),
                    &cfg.trpo,
                    cfg.batch_steps,
                    cfg.workers,
                    cfg.seed,
                    iter,
                )?;
                rows.push(report);
                if tracker.maybe_eval(iter, &policy)? {
                    break;
                }
            }
        }
        HarnessMethod::ExpertTrpo => unreachable!("rejected above"),
    }

    let summary = final_summary(cfg, env, &policy, n_demo_trajs)?;
    persist(cfg, &rows, &summary, &policy, Some(&value))?;
    Ok(RunOutcome {
        summary,
        rows,
        policy,
        value,
    })
}

/// Deterministic-policy evaluation of a saved checkpoint.
pub fn eval_checkpoint(
    checkpoint: &Path,
    env_name: &str,
    episodes: usize,
    seed: u64,
) -> Result<(f64, f64), HarnessError> {
    let env = Env::by_name(env_name)?;
    let policy = load_policy(checkpoint, &env)?;
    Ok(evaluate(&policy, &env, episodes, seed)?)
}
