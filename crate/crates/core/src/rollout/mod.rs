//! Trajectory collection and advantage estimation.
//!
//! Episodes are seeded individually from (seed, episode index), collected
//! in whole episodes only, and merged in index order — so the output is
//! byte-identical for any worker count.

pub mod demos;

pub use demos::{load_demos, save_demos, DemoError, DemoSet, DemoTrajectory, Modality};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::envs::{Env, EnvError, Frame, RenderMap};
use crate::mix_seed;
use crate::models::{ModelError, Policy, ValueMlp};

#[derive(Debug, Error)]
pub enum RolloutError {
    #[error("episode {episode}: {source}")]
    Env { episode: usize, source: EnvError },
    #[error("episode {episode}: {source}")]
    Model { episode: usize, source: ModelError },
    #[error("non-finite input to advantage estimation")]
    NonFinite,
    #[error(transparent)]
    Demo(#[from] DemoError),
}

/// One whole episode. Actions are the raw pre-clamp samples the stored
/// log-probs refer to; `terminated` distinguishes real termination from
/// horizon truncation (which bootstraps the value function).
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub log_probs: Vec<f64>,
    pub frames: Option<Vec<Frame>>,
    pub est_rewards: Vec<f64>,
    pub true_rewards: Vec<f64>,
    pub terminated: bool,
}

impl Trajectory {
    /// Number of transitions T.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn true_return(&self) -> f64 {
        self.true_rewards.iter().sum()
    }

    fn check_consistent(&self) {
        let t = self.len();
        debug_assert_eq!(self.states.len(), t + 1);
        debug_assert_eq!(self.log_probs.len(), t);
        debug_assert_eq!(self.true_rewards.len(), t);
        debug_assert_eq!(self.est_rewards.len(), t);
        if let Some(frames) = &self.frames {
            debug_assert_eq!(frames.len(), t + 1);
        }
    }
}

/// One whole episode from a fresh rng stream. `episode` only labels errors.
pub fn episode(
    policy: &Policy,
    env: &Env,
    render_map: Option<&RenderMap>,
    episode: usize,
    episode_seed: u64,
) -> Result<Trajectory, RolloutError> {
    let mut rng = ChaCha8Rng::seed_from_u64(episode_seed);
    let horizon = env.spec().horizon;
    let mut state = env.reset(&mut rng);
    let mut traj = Trajectory {
        states: vec![state.clone()],
        actions: Vec::new(),
        log_probs: Vec::new(),
        frames: render_map.map(|_| Vec::new()),
        est_rewards: Vec::new(),
        true_rewards: Vec::new(),
        terminated: false,
    };
    if let (Some(map), Some(frames)) = (render_map, traj.frames.as_mut()) {
        frames.push(env.render(&state, map));
    }
    for _ in 0..horizon {
        let sample = policy
            .act(&state, &mut rng)
            .map_err(|source| RolloutError::Model { episode, source })?;
        let step = env
            .step(&state, &sample.env_action, &mut rng)
            .map_err(|source| RolloutError::Env { episode, source })?;
        traj.actions.push(sample.raw_action);
        traj.log_probs.push(sample.log_prob);
        traj.true_rewards.push(step.reward);
        state = step.next_state;
        traj.states.push(state.clone());
        if let (Some(map), Some(frames)) = (render_map, traj.frames.as_mut()) {
            frames.push(env.render(&state, map));
        }
        if step.terminated {
            traj.terminated = true;
            break;
        }
    }
    traj.est_rewards = vec![0.0; traj.len()];
    traj.check_consistent();
    Ok(traj)
}

/// Collects whole episodes until at least `n_steps` environment steps.
pub fn collect(
    policy: &Policy,
    env: &Env,
    render_map: Option<&RenderMap>,
    n_steps: usize,
    workers: usize,
    seed: u64,
) -> Result<Vec<Trajectory>, RolloutError> {
    assert!(n_steps >= 1 && workers >= 1);
    let mut episodes: Vec<Trajectory> = Vec::new();
    let mut total = 0usize;
    let mut next_index = 0usize;
    while total < n_steps {
        // one round: `workers` episodes computed in parallel
        let round: Vec<Result<Trajectory, RolloutError>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let idx = next_index + w;
                    scope.spawn(move || {
                        episode(policy, env, render_map, idx, mix_seed(seed, idx as u64))
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        next_index += workers;
        for traj in round {
            let traj = traj?;
            if total < n_steps {
                total += traj.len();
                episodes.push(traj);
            }
        }
    }
    Ok(episodes)
}

/// Deterministic-policy episode on the true reward, for evaluation only.
pub fn eval_episode(policy: &Policy, env: &Env, seed: u64) -> Result<f64, RolloutError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = env.reset(&mut rng);
    let mut ret = 0.0;
    for _ in 0..env.spec().horizon {
        let action = policy.act_deterministic(&state);
        let step = env
            .step(&state, &action, &mut rng)
            .map_err(|source| RolloutError::Env { episode: 0, source })?;
        ret += step.reward;
        state = step.next_state;
        if step.terminated {
            break;
        }
    }
    Ok(ret)
}

/// Mean and standard deviation over deterministic evaluation episodes.
pub fn evaluate(
    policy: &Policy,
    env: &Env,
    episodes: usize,
    seed: u64,
) -> Result<(f64, f64), RolloutError> {
    let mut returns = Vec::with_capacity(episodes);
    for e in 0..episodes {
        returns.push(eval_episode(policy, env, mix_seed(seed, 0xE7A1 + e as u64))?);
    }
    let mean = returns.iter().sum::<f64>() / episodes as f64;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / episodes as f64;
    Ok((mean, var.sqrt()))
}

/// Generalized advantage estimation.
///
/// `values` has length T+1 with the terminal entry already set (0 for
/// terminated episodes, bootstrap otherwise). Returns (advantages, value
/// targets) with targets = advantages + values[0..T].
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), RolloutError> {
    let t_len = rewards.len();
    assert_eq!(values.len(), t_len + 1);
    if rewards.iter().chain(values).any(|v| !v.is_finite()) {
        return Err(RolloutError::NonFinite);
    }
    let mut advantages = vec![0.0; t_len];
    let mut acc = 0.0;
    for t in (0..t_len).rev() {
        let delta = rewards[t] + gamma * values[t + 1] - values[t];
        acc = delta + gamma * lambda * acc;
        advantages[t] = acc;
    }
    let targets = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((advantages, targets))
}

/// Flattened training batch with per-batch normalized advantages.
#[derive(Debug, Clone)]
pub struct AdvantageBatch {
    pub states: Vec<f64>,
    pub batch: usize,
    pub state_dim: usize,
    pub actions: Vec<Vec<f64>>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub value_targets: Vec<f64>,
}

/// Which reward stream drives the advantages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardStream {
    True,
    Estimated,
}

pub fn advantage_batch(
    trajs: &[Trajectory],
    value_fn: &ValueMlp,
    gamma: f64,
    lambda: f64,
    stream: RewardStream,
) -> Result<AdvantageBatch, RolloutError> {
    let state_dim = trajs[0].states[0].len();
    let mut batch = AdvantageBatch {
        states: Vec::new(),
        batch: 0,
        state_dim,
        actions: Vec::new(),
        old_log_probs: Vec::new(),
        advantages: Vec::new(),
        value_targets: Vec::new(),
    };
    for traj in trajs {
        let t_len = traj.len();
        let mut values: Vec<f64> = traj.states.iter().map(|s| value_fn.value(s)).collect();
        if traj.terminated {
            values[t_len] = 0.0;
        }
        let rewards = match stream {
            RewardStream::True => &traj.true_rewards,
            RewardStream::Estimated => &traj.est_rewards,
        };
        let (adv, targets) = gae(rewards, &values, gamma, lambda)?;
        for t in 0..t_len {
            batch.states.extend_from_slice(&traj.states[t]);
            batch.actions.push(traj.actions[t].clone());
            batch.old_log_probs.push(traj.log_probs[t]);
        }
        batch.advantages.extend(adv);
        batch.value_targets.extend(targets);
        batch.batch += t_len;
    }
    normalize_advantages(&mut batch.advantages);
    Ok(batch)
}

/// Standardizes in place; an all-equal batch carries no ranking signal and
/// becomes zeros instead of dividing by ~0.
fn normalize_advantages(adv: &mut [f64]) {
    if adv.len() < 2 {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-12 {
        for a in adv.iter_mut() {
            *a = 0.0;
        }
    } else {
        for a in adv.iter_mut() {
            *a = (*a - mean) / std;
        }
    }
}
