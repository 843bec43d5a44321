//! GAN-based reward estimators: GAIL over (s,a), SIGAN over (s,s'), and
//! VIGAN over k consecutive rendered frames. The discriminator classifies
//! expert samples as 1 and agent samples as 0; the policy's reward is
//! r = -log(1 - D), so reward rises as the agent fools the discriminator.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::diffcore::{Adam, DiffError, Graph, NodeId, Param, Tensor};
use crate::envs::{ActionSpace, Env, RenderMap};
use crate::mix_seed;
use crate::models::{ConvDiscriminator, MlpDiscriminator, Policy, ValueMlp, DISC_EPS};
use crate::rollout::{
    advantage_batch, collect, DemoSet, Modality, RewardStream, RolloutError, Trajectory,
};
use crate::trpo::{trpo_step, TrpoConfig, TrpoError};

#[derive(Debug, Error)]
pub enum AdvError {
    #[error("modality mismatch: {0}")]
    Modality(String),
    #[error("empty sample pool: {0}")]
    EmptyPool(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Trpo(#[from] TrpoError),
    #[error(transparent)]
    Rollout(#[from] RolloutError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Gail,
    Sigan,
    Vigan,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Gail => "gail",
            Method::Sigan => "sigan",
            Method::Vigan => "vigan",
        }
    }

    pub fn accepts(&self, modality: Modality) -> bool {
        match self {
            Method::Gail => modality == Modality::StateAction,
            Method::Sigan => matches!(modality, Modality::StateAction | Modality::StateOnly),
            Method::Vigan => modality == Modality::Frames,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdversarialConfig {
    pub method: Method,
    pub k_frames: usize,
    pub disc_steps_per_iter: usize,
    pub disc_batch_size: usize,
    pub disc_learning_rate: f64,
    pub reward_clamp_eps: f64,
}

impl Default for AdversarialConfig {
    fn default() -> Self {
        AdversarialConfig {
            method: Method::Gail,
            k_frames: 2,
            disc_steps_per_iter: 1,
            disc_batch_size: 64,
            disc_learning_rate: 1e-4,
            reward_clamp_eps: DISC_EPS,
        }
    }
}

impl AdversarialConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.disc_steps_per_iter < 1 {
            return Err("disc_steps_per_iter must be >= 1".into());
        }
        if !(0.0 < self.reward_clamp_eps && self.reward_clamp_eps < 0.1) {
            return Err(format!(
                "reward_clamp_eps {} outside (0, 0.1)",
                self.reward_clamp_eps
            ));
        }
        if !matches!(self.k_frames, 2 | 3) {
            return Err(format!("k_frames {} not in {{2, 3}}", self.k_frames));
        }
        Ok(())
    }
}

/// Either discriminator head behind one training interface.
#[derive(Debug, Clone)]
pub enum Discriminator {
    Mlp(MlpDiscriminator),
    Conv(ConvDiscriminator),
}

impl Discriminator {
    /// Architecture for a method over a given environment and frame geometry.
    pub fn for_method(
        method: Method,
        env: &Env,
        render: Option<&RenderMap>,
        k_frames: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let spec = env.spec();
        match method {
            Method::Gail => {
                let a_dim = match &spec.action_space {
                    ActionSpace::Discrete(n) => *n,
                    ActionSpace::Box { low, .. } => low.len(),
                };
                Discriminator::Mlp(MlpDiscriminator::new(spec.state_dim + a_dim, rng))
            }
            Method::Sigan => Discriminator::Mlp(MlpDiscriminator::new(2 * spec.state_dim, rng)),
            Method::Vigan => {
                let map = render.expect("vigan requires a render map");
                Discriminator::Conv(ConvDiscriminator::new(
                    k_frames * map.channels,
                    map.height,
                    map.width,
                    rng,
                ))
            }
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Discriminator::Mlp(d) => d.params_mut(),
            Discriminator::Conv(d) => d.params_mut(),
        }
    }

    fn bind(&self, g: &mut Graph) -> Vec<NodeId> {
        match self {
            Discriminator::Mlp(d) => d.bind(g),
            Discriminator::Conv(d) => d.bind(g),
        }
    }

    fn prob_graph(
        &self,
        g: &mut Graph,
        inputs: &Tensor,
        ids: &[NodeId],
    ) -> Result<NodeId, DiffError> {
        match self {
            Discriminator::Mlp(d) => d.prob_graph(g, inputs, ids),
            Discriminator::Conv(d) => d.prob_graph(g, inputs, ids),
        }
    }

    /// D over a batched input tensor, no tape.
    pub fn prob_plain(&self, inputs: &Tensor) -> Vec<f64> {
        let batch = inputs.shape()[0];
        match self {
            Discriminator::Mlp(d) => {
                let dim = inputs.shape()[1];
                (0..batch)
                    .map(|b| d.prob_plain(&inputs.data()[b * dim..(b + 1) * dim]))
                    .collect()
            }
            Discriminator::Conv(d) => d.prob_plain(inputs.data(), batch),
        }
    }
}

/// A borrowed transition pool: either fresh agent rollouts or demos.
enum Pool<'a> {
    Agent(&'a [Trajectory]),
    Demos(&'a DemoSet),
}

impl<'a> Pool<'a> {
    fn n_trajs(&self) -> usize {
        match self {
            Pool::Agent(t) => t.len(),
            Pool::Demos(d) => d.trajectories.len(),
        }
    }

    /// Number of valid sample positions in trajectory `i` for the method.
    fn positions(&self, i: usize, method: Method, k: usize) -> usize {
        match (self, method) {
            (Pool::Agent(t), Method::Vigan) => {
                // a trajectory of F frames holds F - k + 1 k-tuples
                let frames = t[i].frames.as_ref().map_or(0, |f| f.len());
                frames.saturating_sub(k - 1)
            }
            (Pool::Agent(t), _) => t[i].len(),
            (Pool::Demos(d), Method::Vigan) => d.trajectories[i].frames.len().saturating_sub(k - 1),
            (Pool::Demos(d), _) => d.trajectories[i].len(),
        }
    }

    fn row(
        &self,
        i: usize,
        t: usize,
        method: Method,
        k: usize,
        space: &ActionSpace,
        out: &mut Vec<f64>,
    ) {
        match (self, method) {
            (Pool::Agent(trajs), Method::Gail) => {
                sa_row(&trajs[i].states[t], &trajs[i].actions[t], space, out)
            }
            (Pool::Agent(trajs), Method::Sigan) => {
                out.extend_from_slice(&trajs[i].states[t]);
                out.extend_from_slice(&trajs[i].states[t + 1]);
            }
            (Pool::Agent(trajs), Method::Vigan) => {
                let frames = trajs[i].frames.as_ref().unwrap();
                for f in &frames[t..t + k] {
                    out.extend(f.to_chw_normalized());
                }
            }
            (Pool::Demos(d), Method::Gail) => {
                let tr = &d.trajectories[i];
                sa_row(&tr.states[t], &tr.actions[t], space, out)
            }
            (Pool::Demos(d), Method::Sigan) => {
                let tr = &d.trajectories[i];
                out.extend_from_slice(&tr.states[t]);
                out.extend_from_slice(&tr.states[t + 1]);
            }
            (Pool::Demos(d), Method::Vigan) => {
                for f in &d.trajectories[i].frames[t..t + k] {
                    out.extend(f.to_chw_normalized());
                }
            }
        }
    }
}

fn sa_row(state: &[f64], action: &[f64], space: &ActionSpace, out: &mut Vec<f64>) {
    out.extend_from_slice(state);
    match space {
        ActionSpace::Discrete(n) => {
            let idx = action[0] as usize;
            for a in 0..*n {
                out.push(if a == idx { 1.0 } else { 0.0 });
            }
        }
        ActionSpace::Box { .. } => out.extend_from_slice(action),
    }
}

/// Input geometry for the discriminator given method and environment.
fn input_shape(
    method: Method,
    env: &Env,
    render: Option<&RenderMap>,
    k: usize,
    batch: usize,
) -> Vec<usize> {
    let spec = env.spec();
    match method {
        Method::Gail => {
            let a_dim = match &spec.action_space {
                ActionSpace::Discrete(n) => *n,
                ActionSpace::Box { low, .. } => low.len(),
            };
            vec![batch, spec.state_dim + a_dim]
        }
        Method::Sigan => vec![batch, 2 * spec.state_dim],
        Method::Vigan => {
            let map = render.unwrap();
            vec![batch, k * map.channels, map.height, map.width]
        }
    }
}

/// Draws `batch_size` samples from each pool, uniform over all valid
/// positions across all trajectories (equal class priors).
#[allow(clippy::too_many_arguments)]
pub fn make_disc_batch(
    method: Method,
    k: usize,
    env: &Env,
    render: Option<&RenderMap>,
    agent_trajs: &[Trajectory],
    demos: &DemoSet,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor, Tensor), AdvError> {
    if !method.accepts(demos.modality) {
        return Err(AdvError::Modality(format!(
            "{} cannot train on {} demos",
            method.as_str(),
            demos.modality.as_str()
        )));
    }
    let space = &env.spec().action_space;
    let mut out = Vec::with_capacity(2);
    for pool in [Pool::Agent(agent_trajs), Pool::Demos(demos)] {
        let counts: Vec<usize> = (0..pool.n_trajs())
            .map(|i| pool.positions(i, method, k))
            .collect();
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(AdvError::EmptyPool(format!(
                "no valid positions for {}",
                method.as_str()
            )));
        }
        let mut data = Vec::new();
        for _ in 0..batch_size {
            let mut pos = rng.gen_range(0..total);
            let mut traj = 0;
            while pos >= counts[traj] {
                pos -= counts[traj];
                traj += 1;
            }
            pool.row(traj, pos, method, k, space, &mut data);
        }
        let shape = input_shape(method, env, render, k, batch_size);
        out.push(Tensor::new(shape, data).map_err(AdvError::Diff)?);
    }
    let expert = out.pop().unwrap();
    let agent = out.pop().unwrap();
    Ok((agent, expert))
}

/// Enumerates the valid positions of one pool (used by tests and the
/// uniformity check): (trajectory index, start index).
pub fn valid_positions(demos: &DemoSet, method: Method, k: usize) -> Vec<(usize, usize)> {
    let pool = Pool::Demos(demos);
    let mut out = Vec::new();
    for i in 0..pool.n_trajs() {
        for t in 0..pool.positions(i, method, k) {
            out.push((i, t));
        }
    }
    out
}

/// Binary cross-entropy from already-computed discriminator outputs:
/// -mean log D(expert) - mean log(1 - D(agent)).
pub fn disc_loss_from_outputs(
    g: &mut Graph,
    d_agent: NodeId,
    d_expert: NodeId,
) -> Result<NodeId, DiffError> {
    let log_e = g.log(d_expert)?;
    let expert_term = g.mean(log_e);
    let neg = g.scale(d_agent, -1.0);
    let one_minus = g.add_scalar(neg, 1.0);
    let log_a = g.log(one_minus)?;
    let agent_term = g.mean(log_a);
    let sum = g.add(expert_term, agent_term)?;
    Ok(g.scale(sum, -1.0))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DiscStats {
    pub loss: f64,
    pub accuracy: f64,
}

/// One discriminator gradient step on a sampled batch.
pub fn disc_step(
    disc: &mut Discriminator,
    adam: &mut Adam,
    agent_inputs: &Tensor,
    expert_inputs: &Tensor,
) -> Result<DiscStats, AdvError> {
    let mut g = Graph::new();
    let ids = disc.bind(&mut g);
    let d_agent = disc.prob_graph(&mut g, agent_inputs, &ids)?;
    let d_expert = disc.prob_graph(&mut g, expert_inputs, &ids)?;
    let loss = disc_loss_from_outputs(&mut g, d_agent, d_expert)?;
    let stats = DiscStats {
        loss: g.value(loss).item(),
        accuracy: accuracy(g.value(d_agent).data(), g.value(d_expert).data()),
    };
    g.backward(loss)?;
    let mut params = disc.params_mut();
    for (id, p) in ids.iter().zip(params.iter_mut()) {
        if let Some(grad) = g.grad(*id) {
            p.accumulate(grad);
        }
    }
    adam.step(&mut params).map_err(AdvError::Diff)?;
    Ok(stats)
}

fn accuracy(d_agent: &[f64], d_expert: &[f64]) -> f64 {
    let correct = d_agent.iter().filter(|d| **d < 0.5).count()
        + d_expert.iter().filter(|d| **d > 0.5).count();
    correct as f64 / (d_agent.len() + d_expert.len()) as f64
}

/// r = -ln(1 - clamp(D, eps, 1-eps)); strictly positive, increasing in D.
pub fn reward_from_disc(d: f64, eps: f64) -> f64 {
    -(1.0 - d.clamp(eps, 1.0 - eps)).ln()
}

/// Labels every transition of every trajectory with the discriminator
/// reward. For k = 3 the final transition has no complete frame triple and
/// repeats the last available reward.
pub fn label_rewards(
    method: Method,
    disc: &Discriminator,
    trajs: &mut [Trajectory],
    k: usize,
    env: &Env,
    render: Option<&RenderMap>,
    eps: f64,
) -> Result<(), AdvError> {
    let space = env.spec().action_space.clone();
    for traj in trajs.iter_mut() {
        let t_len = traj.len();
        if t_len == 0 {
            continue;
        }
        let mut data = Vec::new();
        let n_inputs = match method {
            Method::Gail | Method::Sigan => t_len,
            Method::Vigan => traj
                .frames
                .as_ref()
                .map_or(0, |f| f.len().saturating_sub(k - 1)),
        };
        for t in 0..n_inputs {
            match method {
                Method::Gail => sa_row(&traj.states[t], &traj.actions[t], &space, &mut data),
                Method::Sigan => {
                    data.extend_from_slice(&traj.states[t]);
                    data.extend_from_slice(&traj.states[t + 1]);
                }
                Method::Vigan => {
                    let frames = traj.frames.as_ref().unwrap();
                    for f in &frames[t..t + k] {
                        data.extend(f.to_chw_normalized());
                    }
                }
            }
        }
        if n_inputs == 0 {
            traj.est_rewards = vec![std::f64::consts::LN_2; t_len];
            continue;
        }
        let shape = input_shape(method, env, render, k, n_inputs);
        let inputs = Tensor::new(shape, data).map_err(AdvError::Diff)?;
        let probs = disc.prob_plain(&inputs);
        let mut rewards: Vec<f64> = probs.iter().map(|d| reward_from_disc(*d, eps)).collect();
        while rewards.len() < t_len {
            let last = *rewards.last().unwrap();
            rewards.push(last);
        }
        rewards.truncate(t_len);
        traj.est_rewards = rewards;
    }
    Ok(())
}

/// Per-iteration log row shared by every imitation method.
#[derive(Debug, Clone, Default)]
pub struct IterationReport {
    pub iter: usize,
    pub mean_true_return: f64,
    pub mean_est_reward: f64,
    pub disc_loss: f64,
    pub disc_accuracy: f64,
    pub kl: f64,
    pub surrogate_improvement: f64,
}

/// One full cycle: collect rollouts (rendering frames for vigan), take
/// discriminator steps, relabel rewards with the updated discriminator,
/// then a trust-region policy update on the estimated rewards.
#[allow(clippy::too_many_arguments)]
pub fn adversarial_iteration(
    policy: &mut Policy,
    value_fn: &mut ValueMlp,
    disc: &mut Discriminator,
    adam: &mut Adam,
    env: &Env,
    render: Option<&RenderMap>,
    demos: &DemoSet,
    cfg: &AdversarialConfig,
    trpo_cfg: &TrpoConfig,
    batch_steps: usize,
    workers: usize,
    seed: u64,
    iter: usize,
) -> Result<IterationReport, AdvError> {
    if cfg.method == Method::Vigan && render.is_none() {
        return Err(AdvError::Modality("vigan requires a render map".into()));
    }
    let rollout_render = if cfg.method == Method::Vigan { render } else { None };
    let mut trajs = collect(
        policy,
        env,
        rollout_render,
        batch_steps,
        workers,
        mix_seed(seed, iter as u64),
    )?;

    let mut disc_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xD15C_0000 + iter as u64));
    let mut stats = DiscStats::default();
    for _ in 0..cfg.disc_steps_per_iter {
        let (agent_b, expert_b) = make_disc_batch(
            cfg.method,
            cfg.k_frames,
            env,
            render,
            &trajs,
            demos,
            cfg.disc_batch_size,
            &mut disc_rng,
        )?;
        stats = disc_step(disc, adam, &agent_b, &expert_b)?;
    }

    // rewards come from the updated discriminator
    label_rewards(cfg.method, disc, &mut trajs, cfg.k_frames, env, render, cfg.reward_clamp_eps)?;

    let gamma = env.spec().gamma;
    let batch = advantage_batch(&trajs, value_fn, gamma, 0.95, RewardStream::Estimated)?;
    let report = trpo_step(policy, value_fn, &batch, trpo_cfg)?;

    let steps: usize = trajs.iter().map(|t| t.len()).sum();
    Ok(IterationReport {
        iter,
        mean_true_return: trajs.iter().map(|t| t.true_return()).sum::<f64>() / trajs.len() as f64,
        mean_est_reward: trajs
            .iter()
            .flat_map(|t| t.est_rewards.iter())
            .sum::<f64>()
            / steps as f64,
        disc_loss: stats.loss,
        disc_accuracy: stats.accuracy,
        kl: report.achieved_kl,
        surrogate_improvement: report.surrogate_improvement,
    })
}

#[cfg(test)]
mod tests;
