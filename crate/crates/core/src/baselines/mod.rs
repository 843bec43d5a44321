//! Comparison reward estimators and behavior cloning. Unlike the
//! adversarial estimators, the pixel and TCN rewards are time-synchronized
//! by construction: each agent step t is scored against the expert frame
//! at the same t of a per-episode reference trajectory.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::adversarial::IterationReport;
use crate::diffcore::{Adam, DiffError, Graph, NodeId, Tensor};
use crate::envs::{Env, Frame, RenderMap};
use crate::mix_seed;
use crate::models::{Policy, TcnEncoder, ValueMlp};
use crate::rollout::{
    advantage_batch, collect, DemoSet, Modality, RewardStream, RolloutError,
};
use crate::trpo::{trpo_step, TrpoConfig, TrpoError};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("frame geometry mismatch: {0}x{1}x{2} vs {3}x{4}x{5}")]
    Geometry(usize, usize, usize, usize, usize, usize),
    #[error("modality mismatch: {0}")]
    Modality(String),
    #[error("trajectory too short for the triplet sampler: length {got}, need > {need}")]
    TooShort { need: usize, got: usize },
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Trpo(#[from] TrpoError),
    #[error(transparent)]
    Rollout(#[from] RolloutError),
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub triplet_pos_window: usize,
    pub triplet_neg_margin: usize,
    pub triplet_margin: f64,
    pub tcn_epochs: usize,
    pub tcn_batch_size: usize,
    pub tcn_learning_rate: f64,
    pub tcn_include_agent_frames: bool,
    pub bc_epochs: usize,
    pub bc_learning_rate: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            triplet_pos_window: 2,
            triplet_neg_margin: 10,
            triplet_margin: 0.2,
            tcn_epochs: 150,
            tcn_batch_size: 32,
            tcn_learning_rate: 1e-3,
            tcn_include_agent_frames: false,
            bc_epochs: 500,
            bc_learning_rate: 1e-3,
        }
    }
}

/// Per-episode alignment of agent steps to one expert trajectory: the
/// reference is chosen uniformly at random per episode and stepped from 0.
#[derive(Debug, Clone, Copy)]
pub struct SyncedDemoIndex {
    pub demo_idx: usize,
}

impl SyncedDemoIndex {
    pub fn choose(n_demos: usize, rng: &mut ChaCha8Rng) -> Self {
        SyncedDemoIndex {
            demo_idx: rng.gen_range(0..n_demos),
        }
    }

    /// Expert frame index aligned to agent step t (clamped at the end).
    pub fn expert_t(&self, t: usize, expert_len: usize) -> usize {
        t.min(expert_len - 1)
    }
}

fn check_geometry(a: &Frame, b: &Frame) -> Result<(), BaselineError> {
    if a.width != b.width || a.height != b.height || a.channels != b.channels {
        return Err(BaselineError::Geometry(
            a.width, a.height, a.channels, b.width, b.height, b.channels,
        ));
    }
    Ok(())
}

/// r = exp(-2 ||e - a||^2) over normalized pixel vectors.
pub fn pixel_reward_normalized(expert: &[f64], agent: &[f64]) -> f64 {
    let d2: f64 = expert
        .iter()
        .zip(agent)
        .map(|(e, a)| (e - a) * (e - a))
        .sum();
    (-2.0 * d2).exp()
}

pub fn pixel_reward(expert: &Frame, agent: &Frame) -> Result<f64, BaselineError> {
    check_geometry(expert, agent)?;
    Ok(pixel_reward_normalized(
        &expert.to_chw_normalized(),
        &agent.to_chw_normalized(),
    ))
}

/// r = exp(-2 ||x_e - x_a||^2) over embedding vectors.
pub fn embedding_reward(expert: &[f64], agent: &[f64]) -> f64 {
    pixel_reward_normalized(expert, agent)
}

pub fn tcn_reward(
    encoder: &TcnEncoder,
    expert_frame: &Frame,
    agent_frame: &Frame,
) -> Result<f64, BaselineError> {
    check_geometry(expert_frame, agent_frame)?;
    let xe = encoder.embed_plain(&expert_frame.to_chw_normalized());
    let xa = encoder.embed_plain(&agent_frame.to_chw_normalized());
    Ok(embedding_reward(&xe, &xa))
}

#[derive(Debug, Clone, Copy)]
pub struct TripletSampler {
    pub pos_window: usize,
    pub neg_margin: usize,
    pub margin: f64,
}

impl TripletSampler {
    pub fn new(pos_window: usize, neg_margin: usize, margin: f64) -> Self {
        assert!(neg_margin > pos_window && pos_window >= 1 && margin > 0.0);
        TripletSampler {
            pos_window,
            neg_margin,
            margin,
        }
    }

    /// (anchor, positive, negative) indices within one trajectory.
    /// Anchors are restricted to positions with at least one frame farther
    /// than the negative margin.
    fn sample(&self, len: usize, rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
        let valid: Vec<usize> = (0..len)
            .filter(|&a| a > self.neg_margin || a + self.neg_margin + 1 < len)
            .collect();
        let a = valid[rng.gen_range(0..valid.len())];
        let lo = a.saturating_sub(self.pos_window);
        let hi = (a + self.pos_window).min(len - 1);
        let mut p = rng.gen_range(lo..=hi);
        if p == a {
            p = if a > lo { a - 1 } else { hi };
        }
        let far: Vec<usize> = (0..len)
            .filter(|&t| t + self.neg_margin < a || t > a + self.neg_margin)
            .collect();
        let n = far[rng.gen_range(0..far.len())];
        (a, p, n)
    }
}

/// Hinge triplet loss max(0, d(a,p) - d(a,n) + m) from embedding nodes.
pub fn triplet_loss_graph(
    g: &mut Graph,
    anchor: NodeId,
    positive: NodeId,
    negative: NodeId,
    margin: f64,
) -> Result<NodeId, DiffError> {
    let dp = g.sub(anchor, positive)?;
    let dp2 = g.mul(dp, dp)?;
    let d_ap = g.sum_rows(dp2)?;
    let dn = g.sub(anchor, negative)?;
    let dn2 = g.mul(dn, dn)?;
    let d_an = g.sum_rows(dn2)?;
    let gap = g.sub(d_ap, d_an)?;
    let shifted = g.add_scalar(gap, margin);
    let hinge = g.relu(shifted);
    Ok(g.mean(hinge))
}

/// Trains the encoder on triplets drawn from the frame trajectories.
/// One epoch = one Adam step on a freshly sampled triplet batch.
/// Returns the final epoch's mean triplet loss.
pub fn tcn_train(
    encoder: &mut TcnEncoder,
    frame_trajs: &[Vec<Frame>],
    sampler: TripletSampler,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    rng: &mut ChaCha8Rng,
) -> Result<f64, BaselineError> {
    for tr in frame_trajs {
        if tr.len() <= sampler.neg_margin + 1 {
            return Err(BaselineError::TooShort {
                need: sampler.neg_margin + 1,
                got: tr.len(),
            });
        }
    }
    let (c, h, w) = {
        let f = &frame_trajs[0][0];
        (f.channels, f.height, f.width)
    };
    let mut adam = Adam::new(learning_rate);
    let mut last = 0.0;
    for _ in 0..epochs {
        let mut bufs = [Vec::new(), Vec::new(), Vec::new()];
        for _ in 0..batch_size {
            let traj = &frame_trajs[rng.gen_range(0..frame_trajs.len())];
            let (a, p, n) = sampler.sample(traj.len(), rng);
            for (buf, idx) in bufs.iter_mut().zip([a, p, n]) {
                buf.extend(traj[idx].to_chw_normalized());
            }
        }
        let mut g = Graph::new();
        let ids = encoder.bind(&mut g);
        let shape = vec![batch_size, c, h, w];
        let embed = |g: &mut Graph, data: Vec<f64>, enc: &TcnEncoder, ids: &[NodeId]| {
            let t = Tensor::new(shape.clone(), data)?;
            enc.embed_graph(g, &t, ids)
        };
        let xa = embed(&mut g, std::mem::take(&mut bufs[0]), encoder, &ids)?;
        let xp = embed(&mut g, std::mem::take(&mut bufs[1]), encoder, &ids)?;
        let xn = embed(&mut g, std::mem::take(&mut bufs[2]), encoder, &ids)?;
        let loss = triplet_loss_graph(&mut g, xa, xp, xn, sampler.margin)?;
        last = g.value(loss).item();
        g.backward(loss).map_err(BaselineError::Diff)?;
        let mut params = encoder.params_mut();
        for (id, p) in ids.iter().zip(params.iter_mut()) {
            if let Some(grad) = g.grad(*id) {
                p.accumulate(grad);
            }
        }
        adam.step(&mut params).map_err(BaselineError::Diff)?;
    }
    Ok(last)
}

/// Maximum-likelihood behavior cloning on (s, a) demos. Full-batch Adam;
/// returns the per-epoch negative log-likelihood curve.
pub fn bc_train(
    policy: &mut Policy,
    demos: &DemoSet,
    epochs: usize,
    learning_rate: f64,
) -> Result<Vec<f64>, BaselineError> {
    if demos.modality != Modality::StateAction {
        return Err(BaselineError::Modality(format!(
            "behavior cloning needs state_action demos, got {}",
            demos.modality.as_str()
        )));
    }
    let mut states = Vec::new();
    let mut actions = Vec::new();
    for tr in &demos.trajectories {
        for t in 0..tr.len() {
            states.extend_from_slice(&tr.states[t]);
            actions.push(tr.actions[t].clone());
        }
    }
    let batch = actions.len();
    let states = Tensor::matrix(batch, demos.state_dim, states)?;
    let mut adam = Adam::new(learning_rate);
    let mut curve = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let mut g = Graph::new();
        let bound = policy.bind(&mut g, &states)?;
        let logp = policy.log_prob_graph(&mut g, &bound, &actions)?;
        let mean_lp = g.mean(logp);
        let loss = g.scale(mean_lp, -1.0);
        curve.push(g.value(loss).item());
        g.backward(loss).map_err(BaselineError::Diff)?;
        let mut params = policy.params_mut();
        for (id, p) in bound.param_ids.iter().zip(params.iter_mut()) {
            if let Some(grad) = g.grad(*id) {
                p.accumulate(grad);
            }
        }
        adam.step(&mut params).map_err(BaselineError::Diff)?;
    }
    Ok(curve)
}

/// Precomputed per-frame reference data for the synced rewards.
pub enum SyncedRewarder {
    Pixel { demo_frames: Vec<Vec<Vec<f64>>> },
    Tcn { embeddings: Vec<Vec<Vec<f64>>> },
}

impl SyncedRewarder {
    pub fn pixel(demos: &DemoSet) -> Result<Self, BaselineError> {
        require_frames(demos)?;
        Ok(SyncedRewarder::Pixel {
            demo_frames: demos
                .trajectories
                .iter()
                .map(|tr| tr.frames.iter().map(|f| f.to_chw_normalized()).collect())
                .collect(),
        })
    }

    pub fn tcn(encoder: &TcnEncoder, demos: &DemoSet) -> Result<Self, BaselineError> {
        require_frames(demos)?;
        Ok(SyncedRewarder::Tcn {
            embeddings: demos
                .trajectories
                .iter()
                .map(|tr| {
                    tr.frames
                        .iter()
                        .map(|f| encoder.embed_plain(&f.to_chw_normalized()))
                        .collect()
                })
                .collect(),
        })
    }

    pub fn n_demos(&self) -> usize {
        match self {
            SyncedRewarder::Pixel { demo_frames } => demo_frames.len(),
            SyncedRewarder::Tcn { embeddings } => embeddings.len(),
        }
    }

    pub fn demo_len(&self, idx: usize) -> usize {
        match self {
            SyncedRewarder::Pixel { demo_frames } => demo_frames[idx].len(),
            SyncedRewarder::Tcn { embeddings } => embeddings[idx].len(),
        }
    }

    /// Reward of an agent frame against the aligned expert reference.
    pub fn reward(
        &self,
        sync: SyncedDemoIndex,
        t: usize,
        agent_frame: &Frame,
        encoder: Option<&TcnEncoder>,
    ) -> f64 {
        let te = sync.expert_t(t, self.demo_len(sync.demo_idx));
        match self {
            SyncedRewarder::Pixel { demo_frames } => pixel_reward_normalized(
                &demo_frames[sync.demo_idx][te],
                &agent_frame.to_chw_normalized(),
            ),
            SyncedRewarder::Tcn { embeddings } => {
                let xa = encoder
                    .expect("tcn rewarder needs its encoder")
                    .embed_plain(&agent_frame.to_chw_normalized());
                embedding_reward(&embeddings[sync.demo_idx][te], &xa)
            }
        }
    }
}

fn require_frames(demos: &DemoSet) -> Result<(), BaselineError> {
    if demos.modality != Modality::Frames {
        return Err(BaselineError::Modality(format!(
            "synced video baselines need frames demos, got {}",
            demos.modality.as_str()
        )));
    }
    Ok(())
}

/// One DeepMimic-style iteration: collect rendered rollouts, score each
/// step against a per-episode synced expert trajectory, then a TRPO step.
#[allow(clippy::too_many_arguments)]
pub fn synced_iteration(
    policy: &mut Policy,
    value_fn: &mut ValueMlp,
    env: &Env,
    render: &RenderMap,
    rewarder: &SyncedRewarder,
    encoder: Option<&TcnEncoder>,
    trpo_cfg: &TrpoConfig,
    batch_steps: usize,
    workers: usize,
    seed: u64,
    iter: usize,
) -> Result<IterationReport, BaselineError> {
    let mut trajs = collect(
        policy,
        env,
        Some(render),
        batch_steps,
        workers,
        mix_seed(seed, iter as u64),
    )?;
    let mut sync_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x55C0_0000 + iter as u64));
    for traj in trajs.iter_mut() {
        let sync = SyncedDemoIndex::choose(rewarder.n_demos(), &mut sync_rng);
        let frames = traj.frames.as_ref().unwrap();
        traj.est_rewards = (0..traj.len())
            .map(|t| rewarder.reward(sync, t, &frames[t], encoder))
            .collect();
    }
    let gamma = env.spec().gamma;
    let batch = advantage_batch(&trajs, value_fn, gamma, 0.95, RewardStream::Estimated)?;
    let report = trpo_step(policy, value_fn, &batch, trpo_cfg)?;
    let steps: usize = trajs.iter().map(|t| t.len()).sum();
    Ok(IterationReport {
        iter,
        mean_true_return: trajs.iter().map(|t| t.true_return()).sum::<f64>() / trajs.len() as f64,
        mean_est_reward: trajs.iter().flat_map(|t| t.est_rewards.iter()).sum::<f64>() / steps as f64,
        disc_loss: f64::NAN,
        disc_accuracy: f64::NAN,
        kl: report.achieved_kl,
        surrogate_improvement: report.surrogate_improvement,
    })
}
