//! Trust-region policy optimization.
//!
//! The step direction solves F x = g by conjugate gradient, where g is the
//! surrogate gradient and F the Fisher information of the policy (the
//! Hessian of mean KL(old || new) at old). F-vector products combine a
//! forward-mode sweep through the policy network with the analytic Fisher
//! of the output distribution, so no second-order tape is needed.

use thiserror::Error;

use crate::diffcore::{sgd_step, DiffError, Graph, NodeId, Tensor};
use crate::models::{BoundPolicy, DistNodes, DistParams, Policy, ValueMlp};
use crate::rollout::AdvantageBatch;

#[derive(Debug, Error)]
pub enum TrpoError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrpoConfig {
    pub max_kl: f64,
    pub cg_iters: usize,
    pub cg_damping: f64,
    pub line_search_backtracks: usize,
    pub line_search_accept_ratio: f64,
    pub value_fit_epochs: usize,
    pub value_learning_rate: f64,
    pub entropy_coef: f64,
}

impl Default for TrpoConfig {
    fn default() -> Self {
        TrpoConfig {
            max_kl: 0.01,
            cg_iters: 10,
            cg_damping: 0.1,
            line_search_backtracks: 10,
            line_search_accept_ratio: 0.1,
            value_fit_epochs: 5,
            value_learning_rate: 1e-3,
            entropy_coef: 0.0,
        }
    }
}

impl TrpoConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_kl <= 0.0 {
            return Err(format!("max_kl {} must be positive", self.max_kl));
        }
        if self.cg_iters < 1 {
            return Err("cg_iters must be at least 1".into());
        }
        if self.entropy_coef < 0.0 {
            return Err(format!("entropy_coef {} must be >= 0", self.entropy_coef));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrpoReport {
    pub surrogate_before: f64,
    pub surrogate_improvement: f64,
    pub achieved_kl: f64,
    pub line_search_steps: usize,
    pub accepted: bool,
    pub cg_residual: f64,
    pub value_loss: f64,
}

/// Surrogate objective mean[exp(logpi_new - logpi_old) * A] + coef * H(pi),
/// recorded on a graph. At the current parameters its value is mean(A) +
/// coef * H and its gradient is the vanilla policy gradient.
pub fn surrogate_graph(
    policy: &Policy,
    batch: &AdvantageBatch,
    entropy_coef: f64,
) -> Result<(Graph, BoundPolicy, NodeId), TrpoError> {
    let mut g = Graph::new();
    let states = Tensor::matrix(batch.batch, batch.state_dim, batch.states.clone())?;
    let bound = policy.bind(&mut g, &states)?;
    let logp = policy.log_prob_graph(&mut g, &bound, &batch.actions)?;
    let old = g.constant(Tensor::vector(batch.old_log_probs.clone()));
    let diff = g.sub(logp, old)?;
    let ratio = g.exp(diff);
    let adv = g.constant(Tensor::vector(batch.advantages.clone()));
    let weighted = g.mul(ratio, adv)?;
    let mut loss = g.mean(weighted);
    if entropy_coef != 0.0 {
        let h = policy.entropy_graph(&mut g, &bound)?;
        let scaled = g.scale(h, entropy_coef);
        loss = g.add(loss, scaled)?;
    }
    if !g.value(loss).item().is_finite() {
        return Err(TrpoError::NonFinite("surrogate"));
    }
    Ok((g, bound, loss))
}

/// Surrogate value at the policy's current parameters, no tape.
pub fn surrogate_value(
    policy: &Policy,
    batch: &AdvantageBatch,
    entropy_coef: f64,
) -> Result<f64, TrpoError> {
    let dist = policy.dist(&batch.states, batch.batch);
    let logp = log_probs_from_dist(&dist, &batch.actions);
    let mut total = 0.0;
    for i in 0..batch.batch {
        total += (logp[i] - batch.old_log_probs[i]).exp() * batch.advantages[i];
    }
    let mut value = total / batch.batch as f64;
    if entropy_coef != 0.0 {
        value += entropy_coef * Policy::entropy_from_dist(&dist);
    }
    if !value.is_finite() {
        return Err(TrpoError::NonFinite("surrogate"));
    }
    Ok(value)
}

/// Per-sample log-probabilities under the given distribution parameters.
pub fn log_probs_from_dist(dist: &DistParams, actions: &[Vec<f64>]) -> Vec<f64> {
    match dist {
        DistParams::Gaussian {
            mean,
            log_std,
            batch,
            dim,
        } => (0..*batch)
            .map(|b| {
                crate::models::gaussian_log_prob(&actions[b], &mean[b * dim..(b + 1) * dim], log_std)
            })
            .collect(),
        DistParams::Categorical { logits, batch, n } => (0..*batch)
            .map(|b| {
                let row = &logits[b * n..(b + 1) * n];
                row[actions[b][0] as usize] - crate::models::log_sum_exp(row)
            })
            .collect(),
    }
}

/// Surrogate gradient in flat parameter order, plus the surrogate value.
pub fn policy_gradient(
    policy: &Policy,
    batch: &AdvantageBatch,
    entropy_coef: f64,
) -> Result<(Vec<f64>, f64), TrpoError> {
    let (mut g, bound, loss) = surrogate_graph(policy, batch, entropy_coef)?;
    let value = g.value(loss).item();
    g.backward(loss)?;
    let mut flat = Vec::with_capacity(policy.n_params());
    for (id, p) in bound.param_ids.iter().zip(policy.params()) {
        match g.grad(*id) {
            Some(grad) => flat.extend_from_slice(grad),
            None => flat.extend(std::iter::repeat(0.0).take(p.numel())),
        }
    }
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(TrpoError::NonFinite("policy gradient"));
    }
    Ok((flat, value))
}

/// Reusable Fisher-vector product over one recorded policy forward pass.
pub struct FisherVectorProduct<'a> {
    policy: &'a Policy,
    graph: Graph,
    bound: BoundPolicy,
    batch: usize,
    damping: f64,
    param_sizes: Vec<usize>,
}

impl<'a> FisherVectorProduct<'a> {
    pub fn new(
        policy: &'a Policy,
        states: &[f64],
        batch: usize,
        damping: f64,
    ) -> Result<Self, TrpoError> {
        let mut graph = Graph::new();
        let states = Tensor::matrix(batch, policy.state_dim(), states.to_vec())?;
        let bound = policy.bind(&mut graph, &states)?;
        let param_sizes = policy.params().iter().map(|p| p.numel()).collect();
        Ok(FisherVectorProduct {
            policy,
            graph,
            bound,
            batch,
            damping,
            param_sizes,
        })
    }

    pub fn dim(&self) -> usize {
        self.param_sizes.iter().sum()
    }

    /// (F + damping I) v — symmetric positive semi-definite by construction.
    pub fn apply(&mut self, v: &[f64]) -> Result<Vec<f64>, TrpoError> {
        if v.len() != self.dim() {
            return Err(TrpoError::Dimension {
                expected: self.dim(),
                got: v.len(),
            });
        }
        // forward-mode: tangents of the distribution outputs along v
        let mut seeds = Vec::with_capacity(self.param_sizes.len());
        let mut off = 0;
        for (id, n) in self.bound.param_ids.iter().zip(&self.param_sizes) {
            seeds.push((*id, &v[off..off + *n]));
            off += n;
        }
        self.graph.jvp(&seeds)?;

        let b = self.batch as f64;
        match (&self.bound.dist, self.policy) {
            (DistNodes::Gaussian { mean, log_std }, Policy::Gaussian(p)) => {
                let dim = p.action_dim();
                let tangent = self.graph.tangent(*mean).unwrap().to_vec();
                let ls = p.log_std.value.data();
                let mut seed = vec![0.0; tangent.len()];
                for i in 0..self.batch {
                    for d in 0..dim {
                        let inv_var = (-2.0 * ls[d]).exp();
                        seed[i * dim + d] = tangent[i * dim + d] * inv_var / b;
                    }
                }
                let mean = *mean;
                let ls_tangent = self.graph.tangent(*log_std).unwrap().to_vec();
                self.graph.backward_seeded(mean, &seed)?;
                let mut out = self.collect_grads();
                // log-std block: per-sample Fisher is 2 per dimension and the
                // parameter is shared, so the batch mean leaves a factor 2
                let ls_off = self.dim() - dim;
                for d in 0..dim {
                    out[ls_off + d] += 2.0 * ls_tangent[d];
                }
                self.finish(out, v)
            }
            (DistNodes::Categorical { logits }, Policy::Categorical(p)) => {
                let n = p.n_actions;
                let tangent = self.graph.tangent(*logits).unwrap().to_vec();
                let logit_vals = self.graph.value(*logits).data().to_vec();
                let mut seed = vec![0.0; tangent.len()];
                for i in 0..self.batch {
                    let row = &logit_vals[i * n..(i + 1) * n];
                    let probs = crate::models::softmax(row);
                    let dz = &tangent[i * n..(i + 1) * n];
                    let pdz: f64 = probs.iter().zip(dz).map(|(p, d)| p * d).sum();
                    for a in 0..n {
                        seed[i * n + a] = probs[a] * (dz[a] - pdz) / b;
                    }
                }
                let logits = *logits;
                self.graph.backward_seeded(logits, &seed)?;
                let out = self.collect_grads();
                self.finish(out, v)
            }
            _ => unreachable!("bound policy family mismatch"),
        }
    }

    fn collect_grads(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        for (id, n) in self.bound.param_ids.iter().zip(&self.param_sizes) {
            match self.graph.grad(*id) {
                Some(grad) => out.extend_from_slice(grad),
                None => out.extend(std::iter::repeat(0.0).take(*n)),
            }
        }
        out
    }

    fn finish(&self, mut out: Vec<f64>, v: &[f64]) -> Result<Vec<f64>, TrpoError> {
        for (o, vi) in out.iter_mut().zip(v) {
            *o += self.damping * vi;
        }
        if out.iter().any(|x| !x.is_finite()) {
            return Err(TrpoError::NonFinite("fisher-vector product"));
        }
        Ok(out)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Conjugate gradient for symmetric positive semi-definite systems.
/// Returns (best iterate, residual norm of the best iterate).
pub fn conjugate_gradient<F>(
    mut apply_a: F,
    b: &[f64],
    iters: usize,
    tol: f64,
) -> Result<(Vec<f64>, f64), TrpoError>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>, TrpoError>,
{
    let n = b.len();
    let b_norm = dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut p = b.to_vec();
    let mut rs = dot(&r, &r);
    let mut best = (x.clone(), rs.sqrt());
    if b_norm == 0.0 {
        return Ok(best);
    }
    for _ in 0..iters {
        let ap = apply_a(&p)?;
        let pap = dot(&p, &ap);
        if !pap.is_finite() {
            return Err(TrpoError::NonFinite("conjugate gradient"));
        }
        if pap <= 0.0 {
            break; // lost positive definiteness numerically
        }
        let alpha = rs / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rs_new = dot(&r, &r);
        if !rs_new.is_finite() {
            return Err(TrpoError::NonFinite("conjugate gradient"));
        }
        if rs_new.sqrt() < best.1 {
            best = (x.clone(), rs_new.sqrt());
        }
        if rs_new.sqrt() <= tol * b_norm {
            break;
        }
        let beta = rs_new / rs;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rs = rs_new;
    }
    Ok(best)
}

/// One trust-region policy update followed by a value-function fit.
///
/// Backtracking line search along the natural-gradient direction scaled to
/// the trust region; a step is accepted only if the surrogate improves and
/// KL(old || new) stays within max_kl. On total failure the parameters are
/// left untouched.
pub fn trpo_step(
    policy: &mut Policy,
    value_fn: &mut ValueMlp,
    batch: &AdvantageBatch,
    config: &TrpoConfig,
) -> Result<TrpoReport, TrpoError> {
    let mut report = TrpoReport::default();
    let (grad, surr_before) = policy_gradient(policy, batch, config.entropy_coef)?;
    report.surrogate_before = surr_before;

    let grad_norm = dot(&grad, &grad).sqrt();
    if grad_norm > 1e-12 {
        let mut fvp =
            FisherVectorProduct::new(policy, &batch.states, batch.batch, config.cg_damping)?;
        let (direction, residual) =
            conjugate_gradient(|v| fvp.apply(v), &grad, config.cg_iters, 1e-10)?;
        report.cg_residual = residual;

        let fd = fvp.apply(&direction)?;
        let dad = dot(&direction, &fd);
        if dad > 1e-16 {
            let scale = (2.0 * config.max_kl / dad).sqrt();
            let full_step: Vec<f64> = direction.iter().map(|d| d * scale).collect();
            let expected = dot(&grad, &full_step);

            let theta_old = policy.flat_params();
            let old_dist = policy.dist(&batch.states, batch.batch);
            let mut accepted = false;
            let mut frac = 1.0;
            for ls_step in 0..config.line_search_backtracks {
                let theta: Vec<f64> = theta_old
                    .iter()
                    .zip(&full_step)
                    .map(|(t, s)| t + frac * s)
                    .collect();
                policy.set_flat_params(&theta);
                let surr = surrogate_value(policy, batch, config.entropy_coef);
                let new_dist = policy.dist(&batch.states, batch.batch);
                let kl = Policy::kl_mean(&old_dist, &new_dist);
                if let Ok(surr) = surr {
                    let improve = surr - surr_before;
                    if kl.is_finite()
                        && kl <= config.max_kl
                        && improve > 0.0
                        && improve >= config.line_search_accept_ratio * expected * frac
                    {
                        report.accepted = true;
                        report.line_search_steps = ls_step;
                        report.achieved_kl = kl;
                        report.surrogate_improvement = improve;
                        accepted = true;
                        break;
                    }
                }
                frac *= 0.5;
            }
            if !accepted {
                policy.set_flat_params(&theta_old);
                report.line_search_steps = config.line_search_backtracks;
            }
        }
    }

    report.value_loss = fit_value(value_fn, batch, config)?;
    Ok(report)
}

/// Full-batch gradient descent on squared error to the value targets.
fn fit_value(
    value_fn: &mut ValueMlp,
    batch: &AdvantageBatch,
    config: &TrpoConfig,
) -> Result<f64, TrpoError> {
    let states = Tensor::matrix(batch.batch, batch.state_dim, batch.states.clone())?;
    let mut last = 0.0;
    for _ in 0..config.value_fit_epochs {
        let mut g = Graph::new();
        let ids = value_fn.bind(&mut g);
        let pred = value_fn.forward_graph(&mut g, &states, &ids)?;
        let targets = g.constant(Tensor::vector(batch.value_targets.clone()));
        let err = g.sub(pred, targets)?;
        let sq = g.mul(err, err)?;
        let loss = g.mean(sq);
        last = g.value(loss).item();
        if !last.is_finite() {
            return Err(TrpoError::NonFinite("value loss"));
        }
        g.backward(loss)?;
        let mut params = value_fn.params_mut();
        for (id, p) in ids.iter().zip(params.iter_mut()) {
            if let Some(grad) = g.grad(*id) {
                p.accumulate(grad);
            }
        }
        sgd_step(&mut params, config.value_learning_rate)?;
    }
    Ok(last)
}

#[cfg(test)]
mod tests;
