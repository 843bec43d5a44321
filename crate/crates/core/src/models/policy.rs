//! Stochastic policies: Gaussian for box action spaces, categorical for
//! discrete ones. Both use the same 64-64 ReLU trunk.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{DiffError, Graph, NodeId, Param, Tensor};

use super::nn::{standard_normal, Mlp};
use super::ModelError;

const LOG_2PI: f64 = 1.8378770664093453; // ln(2*pi)

/// Gaussian policy with a state-independent log-std vector.
#[derive(Debug, Clone)]
pub struct GaussianMlpPolicy {
    pub mean_net: Mlp,
    pub log_std: Param,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
}

impl GaussianMlpPolicy {
    pub fn new(
        state_dim: usize,
        action_low: Vec<f64>,
        action_high: Vec<f64>,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let action_dim = action_low.len();
        GaussianMlpPolicy {
            mean_net: Mlp::new("policy/mean", &[state_dim, 64, 64, action_dim], 0.01, rng),
            log_std: Param::new("policy/log_std", Tensor::zeros(vec![action_dim])),
            action_low,
            action_high,
        }
    }

    pub fn action_dim(&self) -> usize {
        self.action_low.len()
    }
}

/// Softmax policy over a discrete action set.
#[derive(Debug, Clone)]
pub struct CategoricalMlpPolicy {
    pub logits_net: Mlp,
    pub n_actions: usize,
}

impl CategoricalMlpPolicy {
    pub fn new(state_dim: usize, n_actions: usize, rng: &mut ChaCha8Rng) -> Self {
        CategoricalMlpPolicy {
            logits_net: Mlp::new("policy/logits", &[state_dim, 64, 64, n_actions], 0.01, rng),
            n_actions,
        }
    }
}

/// One sampled action. `raw_action` is the pre-clamp sample the log-prob
/// refers to; `env_action` is what the environment should execute.
#[derive(Debug, Clone)]
pub struct ActionSample {
    pub env_action: Vec<f64>,
    pub raw_action: Vec<f64>,
    pub log_prob: f64,
}

/// Distribution parameters evaluated over a state batch.
#[derive(Debug, Clone)]
pub enum DistParams {
    Gaussian {
        mean: Vec<f64>,
        log_std: Vec<f64>,
        batch: usize,
        dim: usize,
    },
    Categorical {
        logits: Vec<f64>,
        batch: usize,
        n: usize,
    },
}

/// Graph handles for the distribution outputs of a bound policy.
pub enum DistNodes {
    Gaussian { mean: NodeId, log_std: NodeId },
    Categorical { logits: NodeId },
}

/// A policy recorded on a graph: parameter leaves (in `params()` order)
/// plus the distribution output nodes.
pub struct BoundPolicy {
    pub param_ids: Vec<NodeId>,
    pub dist: DistNodes,
}

#[derive(Debug, Clone)]
pub enum Policy {
    Gaussian(GaussianMlpPolicy),
    Categorical(CategoricalMlpPolicy),
}

impl Policy {
    pub fn state_dim(&self) -> usize {
        match self {
            Policy::Gaussian(p) => p.mean_net.in_dim(),
            Policy::Categorical(p) => p.logits_net.in_dim(),
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        match self {
            Policy::Gaussian(p) => {
                let mut v = p.mean_net.params();
                v.push(&p.log_std);
                v
            }
            Policy::Categorical(p) => p.logits_net.params(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Policy::Gaussian(p) => {
                let mut v = p.mean_net.params_mut();
                v.push(&mut p.log_std);
                v
            }
            Policy::Categorical(p) => p.logits_net.params_mut(),
        }
    }

    pub fn n_params(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for p in self.params() {
            out.extend_from_slice(p.value.data());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        let mut off = 0;
        for p in self.params_mut() {
            let n = p.numel();
            p.value.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        debug_assert_eq!(off, flat.len());
    }

    pub fn act(&self, state: &[f64], rng: &mut ChaCha8Rng) -> Result<ActionSample, ModelError> {
        if state.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteInput("state"));
        }
        match self {
            Policy::Gaussian(p) => {
                let mean = p.mean_net.forward_vec(state);
                let ls = p.log_std.value.data();
                let raw: Vec<f64> = mean
                    .iter()
                    .zip(ls)
                    .map(|(m, l)| m + l.exp() * standard_normal(rng))
                    .collect();
                let log_prob = gaussian_log_prob(&raw, &mean, ls);
                let env_action: Vec<f64> = raw
                    .iter()
                    .zip(p.action_low.iter().zip(&p.action_high))
                    .map(|(a, (lo, hi))| a.clamp(*lo, *hi))
                    .collect();
                Ok(ActionSample {
                    env_action,
                    raw_action: raw,
                    log_prob,
                })
            }
            Policy::Categorical(p) => {
                let logits = p.logits_net.forward_vec(state);
                let probs = softmax(&logits);
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut idx = p.n_actions - 1;
                for (i, pr) in probs.iter().enumerate() {
                    acc += pr;
                    if u < acc {
                        idx = i;
                        break;
                    }
                }
                let log_prob = probs[idx].max(1e-300).ln();
                let a = vec![idx as f64];
                Ok(ActionSample {
                    env_action: a.clone(),
                    raw_action: a,
                    log_prob,
                })
            }
        }
    }

    /// Mean action / argmax action, for evaluation rollouts.
    pub fn act_deterministic(&self, state: &[f64]) -> Vec<f64> {
        match self {
            Policy::Gaussian(p) => {
                let mean = p.mean_net.forward_vec(state);
                mean.iter()
                    .zip(p.action_low.iter().zip(&p.action_high))
                    .map(|(a, (lo, hi))| a.clamp(*lo, *hi))
                    .collect()
            }
            Policy::Categorical(p) => {
                let logits = p.logits_net.forward_vec(state);
                let mut best = 0;
                for i in 1..logits.len() {
                    if logits[i] > logits[best] {
                        best = i;
                    }
                }
                vec![best as f64]
            }
        }
    }

    pub fn log_prob(&self, state: &[f64], action: &[f64]) -> f64 {
        match self {
            Policy::Gaussian(p) => {
                let mean = p.mean_net.forward_vec(state);
                gaussian_log_prob(action, &mean, p.log_std.value.data())
            }
            Policy::Categorical(p) => {
                let logits = p.logits_net.forward_vec(state);
                let idx = action[0] as usize;
                let lse = log_sum_exp(&logits);
                logits[idx] - lse
            }
        }
    }

    /// Distribution parameters for a batch of states (row-major flat).
    pub fn dist(&self, states: &[f64], batch: usize) -> DistParams {
        let ds = self.state_dim();
        debug_assert_eq!(states.len(), batch * ds);
        match self {
            Policy::Gaussian(p) => {
                let dim = p.action_dim();
                let mut mean = Vec::with_capacity(batch * dim);
                for b in 0..batch {
                    mean.extend(p.mean_net.forward_vec(&states[b * ds..(b + 1) * ds]));
                }
                DistParams::Gaussian {
                    mean,
                    log_std: p.log_std.value.data().to_vec(),
                    batch,
                    dim,
                }
            }
            Policy::Categorical(p) => {
                let n = p.n_actions;
                let mut logits = Vec::with_capacity(batch * n);
                for b in 0..batch {
                    logits.extend(p.logits_net.forward_vec(&states[b * ds..(b + 1) * ds]));
                }
                DistParams::Categorical { logits, batch, n }
            }
        }
    }

    /// Mean entropy of the policy over the batch the `DistParams` came from.
    pub fn entropy_from_dist(dist: &DistParams) -> f64 {
        match dist {
            DistParams::Gaussian { log_std, dim, .. } => {
                log_std.iter().sum::<f64>() + 0.5 * (*dim as f64) * (1.0 + LOG_2PI)
            }
            DistParams::Categorical { logits, batch, n } => {
                let mut total = 0.0;
                for b in 0..*batch {
                    let row = &logits[b * n..(b + 1) * n];
                    let lse = log_sum_exp(row);
                    let mut h = 0.0;
                    for &z in row {
                        let lp = z - lse;
                        h -= lp.exp() * lp;
                    }
                    total += h;
                }
                total / *batch as f64
            }
        }
    }

    /// Mean KL(old || new) over the state batch.
    pub fn kl_mean(old: &DistParams, new: &DistParams) -> f64 {
        match (old, new) {
            (
                DistParams::Gaussian {
                    mean: mo,
                    log_std: lo,
                    batch,
                    dim,
                },
                DistParams::Gaussian {
                    mean: mn,
                    log_std: ln_,
                    ..
                },
            ) => {
                let mut total = 0.0;
                for b in 0..*batch {
                    for d in 0..*dim {
                        let (m0, m1) = (mo[b * dim + d], mn[b * dim + d]);
                        let (l0, l1) = (lo[d], ln_[d]);
                        total += l1 - l0
                            + ((2.0 * l0).exp() + (m0 - m1) * (m0 - m1)) / (2.0 * (2.0 * l1).exp())
                            - 0.5;
                    }
                }
                total / *batch as f64
            }
            (
                DistParams::Categorical { logits: zo, batch, n },
                DistParams::Categorical { logits: zn, .. },
            ) => {
                let mut total = 0.0;
                for b in 0..*batch {
                    let ro = &zo[b * n..(b + 1) * n];
                    let rn = &zn[b * n..(b + 1) * n];
                    let (lo, ln_) = (log_sum_exp(ro), log_sum_exp(rn));
                    for a in 0..*n {
                        let lpo = ro[a] - lo;
                        let lpn = rn[a] - ln_;
                        total += lpo.exp() * (lpo - lpn);
                    }
                }
                total / *batch as f64
            }
            _ => panic!("kl_mean: mismatched distribution families"),
        }
    }

    /// Records the policy network on the graph over a constant state batch.
    pub fn bind(&self, g: &mut Graph, states: &Tensor) -> Result<BoundPolicy, DiffError> {
        let x = g.constant(states.clone());
        match self {
            Policy::Gaussian(p) => {
                let mut ids = p.mean_net.bind(g);
                let ls = g.param(&p.log_std);
                let mean = p.mean_net.forward_graph(g, x, &ids)?;
                ids.push(ls);
                Ok(BoundPolicy {
                    param_ids: ids,
                    dist: DistNodes::Gaussian { mean, log_std: ls },
                })
            }
            Policy::Categorical(p) => {
                let ids = p.logits_net.bind(g);
                let logits = p.logits_net.forward_graph(g, x, &ids)?;
                Ok(BoundPolicy {
                    param_ids: ids,
                    dist: DistNodes::Categorical { logits },
                })
            }
        }
    }

    /// Differentiable per-sample log-probabilities, shape [batch].
    pub fn log_prob_graph(
        &self,
        g: &mut Graph,
        bound: &BoundPolicy,
        actions: &[Vec<f64>],
    ) -> Result<NodeId, DiffError> {
        match (&bound.dist, self) {
            (DistNodes::Gaussian { mean, log_std }, Policy::Gaussian(p)) => {
                let dim = p.action_dim();
                let batch = actions.len();
                let flat: Vec<f64> = actions.iter().flatten().copied().collect();
                let a = g.constant(Tensor::new(vec![batch, dim], flat)?);
                let diff = g.sub(a, *mean)?;
                let neg_ls = g.scale(*log_std, -1.0);
                let inv_sigma = g.exp(neg_ls);
                let z = g.mul_row(diff, inv_sigma)?;
                let z2 = g.mul(z, z)?;
                let ssq = g.sum_rows(z2)?;
                let t = g.scale(ssq, -0.5);
                let sum_ls = g.sum(*log_std);
                let t = g.sub_scalar_node(t, sum_ls)?;
                Ok(g.add_scalar(t, -0.5 * dim as f64 * LOG_2PI))
            }
            (DistNodes::Categorical { logits }, Policy::Categorical(p)) => {
                let n = p.n_actions;
                let idx: Vec<usize> = actions.iter().map(|a| a[0] as usize).collect();
                let (zs, lse) = log_softmax_parts(g, *logits, n)?;
                let sel = g.gather_cols(zs, &idx)?;
                g.sub(sel, lse)
            }
            _ => unreachable!("bound policy family mismatch"),
        }
    }

    /// Differentiable mean entropy, scalar node.
    pub fn entropy_graph(&self, g: &mut Graph, bound: &BoundPolicy) -> Result<NodeId, DiffError> {
        match (&bound.dist, self) {
            (DistNodes::Gaussian { log_std, .. }, Policy::Gaussian(p)) => {
                let s = g.sum(*log_std);
                Ok(g.add_scalar(s, 0.5 * p.action_dim() as f64 * (1.0 + LOG_2PI)))
            }
            (DistNodes::Categorical { logits }, Policy::Categorical(p)) => {
                let (zs, lse) = log_softmax_parts(g, *logits, p.n_actions)?;
                let logp = g.sub_col(zs, lse)?;
                let probs = g.exp(logp);
                let plogp = g.mul(probs, logp)?;
                let rows = g.sum_rows(plogp)?;
                let neg_h = g.mean(rows);
                Ok(g.scale(neg_h, -1.0))
            }
            _ => unreachable!("bound policy family mismatch"),
        }
    }
}

/// Shifted logits and row log-sum-exp; the shift uses detached row maxima,
/// which leaves gradients unchanged.
fn log_softmax_parts(g: &mut Graph, logits: NodeId, n: usize) -> Result<(NodeId, NodeId), DiffError> {
    let vals = g.value(logits).data().to_vec();
    let batch = vals.len() / n;
    let maxes: Vec<f64> = (0..batch)
        .map(|b| vals[b * n..(b + 1) * n].iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let m = g.constant(Tensor::vector(maxes));
    let zs = g.sub_col(logits, m)?;
    let e = g.exp(zs);
    let se = g.sum_rows(e)?;
    let lse = g.log(se)?;
    Ok((zs, lse))
}

pub fn gaussian_log_prob(action: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    let mut lp = -0.5 * action.len() as f64 * LOG_2PI;
    for ((a, m), l) in action.iter().zip(mean).zip(log_std) {
        let z = (a - m) / l.exp();
        lp += -0.5 * z * z - l;
    }
    lp
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;

    fn gaussian_1d() -> Policy {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Policy::Gaussian(GaussianMlpPolicy::new(2, vec![-2.0], vec![2.0], &mut rng))
    }

    #[test]
    fn standard_normal_log_prob_at_mode() {
        // N(0,1) density at 0: -0.5*ln(2*pi)
        let lp = gaussian_log_prob(&[0.0], &[0.0], &[0.0]);
        assert!((lp - (-0.9189385332046727)).abs() < 1e-12);
    }

    #[test]
    fn uniform_logits_give_half() {
        let p = softmax(&[0.0, 0.0]);
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn tiny_variance_sample_collapses_to_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = GaussianMlpPolicy::new(2, vec![-10.0], vec![10.0], &mut rng);
        p.log_std.value.data_mut()[0] = -40.0;
        let pol = Policy::Gaussian(p);
        let state = [0.3, -0.7];
        let mean = pol.act_deterministic(&state);
        let s = pol.act(&state, &mut rng).unwrap();
        assert!((s.raw_action[0] - mean[0]).abs() < 1e-12);
    }

    #[test]
    fn gaussian_kl_analytic_example() {
        // KL(N(0,1) || N(1,1)) = 0.5
        let old = DistParams::Gaussian {
            mean: vec![0.0],
            log_std: vec![0.0],
            batch: 1,
            dim: 1,
        };
        let new = DistParams::Gaussian {
            mean: vec![1.0],
            log_std: vec![0.0],
            batch: 1,
            dim: 1,
        };
        assert!((Policy::kl_mean(&old, &new) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn entropies_match_analytic_values() {
        let g = DistParams::Gaussian {
            mean: vec![3.0],
            log_std: vec![0.0],
            batch: 1,
            dim: 1,
        };
        assert!((Policy::entropy_from_dist(&g) - 1.4189385332046727).abs() < 1e-12);

        // p = [0.3, 0.7]: H = -(0.3 ln 0.3 + 0.7 ln 0.7), computed directly.
        let direct = -(0.3f64 * 0.3f64.ln() + 0.7 * 0.7f64.ln());
        let c = DistParams::Categorical {
            logits: vec![0.3f64.ln(), 0.7f64.ln()],
            batch: 1,
            n: 2,
        };
        assert!((Policy::entropy_from_dist(&c) - direct).abs() < 1e-12);
    }

    #[test]
    fn kl_of_identical_params_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pol = gaussian_1d();
        let states: Vec<f64> = (0..10).map(|_| standard_normal(&mut rng)).collect();
        let d = pol.dist(&states, 5);
        assert_eq!(Policy::kl_mean(&d, &d), 0.0);

        let cat = Policy::Categorical(CategoricalMlpPolicy::new(2, 3, &mut rng));
        let d2 = cat.dist(&states, 5);
        assert_eq!(Policy::kl_mean(&d2, &d2), 0.0);
    }

    #[test]
    fn act_rejects_non_finite_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pol = gaussian_1d();
        assert!(pol.act(&[f64::NAN, 0.0], &mut rng).is_err());
    }

    #[test]
    fn sampling_moments_match_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let pol = gaussian_1d();
        let state = [0.5, -0.5];
        let mean = pol.act_deterministic(&state)[0];
        let n = 100_000;
        let samples: Vec<f64> = (0..n)
            .map(|_| pol.act(&state, &mut rng).unwrap().raw_action[0])
            .collect();
        let m = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
        // sigma = 1 (log_std 0); 3 standard errors
        let se_mean = 1.0 / (n as f64).sqrt();
        assert!((m - mean).abs() < 3.0 * se_mean, "mean {m} vs {mean}");
        let se_var = (2.0f64 / n as f64).sqrt();
        assert!((var - 1.0).abs() < 3.0 * se_var, "var {var}");
    }

    #[test]
    fn density_integrates_to_one_on_grid() {
        let pol = gaussian_1d();
        let state = [0.1, 0.2];
        // trapezoid rule over [-8, 8]
        let n = 4000;
        let (a, b) = (-8.0, 8.0);
        let h = (b - a) / n as f64;
        let mut total = 0.0;
        for i in 0..=n {
            let x = a + i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            total += w * pol.log_prob(&state, &[x]).exp();
        }
        total *= h;
        assert!((total - 1.0).abs() < 1e-3, "integral {total}");
    }

    #[test]
    fn graph_log_prob_matches_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let pol = gaussian_1d();
        let states = vec![0.4, -0.2, 1.0, 0.3];
        let actions = vec![vec![0.7], vec![-0.3]];
        let mut g = Graph::new();
        let bound = pol
            .bind(&mut g, &Tensor::matrix(2, 2, states.clone()).unwrap())
            .unwrap();
        let lp = pol.log_prob_graph(&mut g, &bound, &actions).unwrap();
        for b in 0..2 {
            let plain = pol.log_prob(&states[b * 2..(b + 1) * 2], &actions[b]);
            assert!((g.value(lp).data()[b] - plain).abs() < 1e-12);
        }

        let cat = Policy::Categorical(CategoricalMlpPolicy::new(2, 3, &mut rng));
        let actions = vec![vec![2.0], vec![0.0]];
        let mut g = Graph::new();
        let bound = cat
            .bind(&mut g, &Tensor::matrix(2, 2, states.clone()).unwrap())
            .unwrap();
        let lp = cat.log_prob_graph(&mut g, &bound, &actions).unwrap();
        for b in 0..2 {
            let plain = cat.log_prob(&states[b * 2..(b + 1) * 2], &actions[b]);
            assert!((g.value(lp).data()[b] - plain).abs() < 1e-12);
        }
    }

    #[test]
    fn graph_entropy_matches_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let cat = Policy::Categorical(CategoricalMlpPolicy::new(2, 4, &mut rng));
        let states = vec![0.4, -0.2, 1.0, 0.3, -0.5, 0.8];
        let d = cat.dist(&states, 3);
        let plain = Policy::entropy_from_dist(&d);
        let mut g = Graph::new();
        let bound = cat
            .bind(&mut g, &Tensor::matrix(3, 2, states).unwrap())
            .unwrap();
        let h = cat.entropy_graph(&mut g, &bound).unwrap();
        assert!((g.value(h).item() - plain).abs() < 1e-12);
    }
}
