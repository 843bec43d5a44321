use super::*;
use crate::models::{CategoricalMlpPolicy, GaussianMlpPolicy};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn bandit_batch(policy: &Policy, n: usize) -> AdvantageBatch {
    // one-state categorical bandit: every sample is action 0 with A = +1
    let mut states = Vec::new();
    let mut actions = Vec::new();
    let mut old_log_probs = Vec::new();
    for _ in 0..n {
        states.push(1.0);
        actions.push(vec![0.0]);
        old_log_probs.push(policy.log_prob(&[1.0], &[0.0]));
    }
    AdvantageBatch {
        states,
        batch: n,
        state_dim: 1,
        actions,
        old_log_probs,
        advantages: vec![1.0; n],
        value_targets: vec![0.0; n],
    }
}

fn small_gaussian_batch(policy: &Policy, seed: u64, n: usize) -> AdvantageBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ds = policy.state_dim();
    let mut states = Vec::new();
    let mut actions = Vec::new();
    let mut old_log_probs = Vec::new();
    let mut advantages = Vec::new();
    for _ in 0..n {
        let s: Vec<f64> = (0..ds).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let a = policy.act(&s, &mut rng).unwrap();
        states.extend_from_slice(&s);
        actions.push(a.raw_action);
        old_log_probs.push(a.log_prob);
        advantages.push(rng.gen_range(-1.0..1.0));
    }
    AdvantageBatch {
        states,
        batch: n,
        state_dim: ds,
        actions,
        old_log_probs,
        advantages,
        value_targets: vec![0.0; n],
    }
}

#[test]
fn surrogate_at_current_params_is_mean_advantage() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let policy = Policy::Gaussian(GaussianMlpPolicy::new(2, vec![-1.0], vec![1.0], &mut rng));
    let batch = small_gaussian_batch(&policy, 1, 16);
    let expect = batch.advantages.iter().sum::<f64>() / 16.0;
    let v = surrogate_value(&policy, &batch, 0.0).unwrap();
    assert!((v - expect).abs() < 1e-12);
    let (g, _, loss) = surrogate_graph(&policy, &batch, 0.0).unwrap();
    assert!((g.value(loss).item() - expect).abs() < 1e-12);
}

#[test]
fn zero_advantages_zero_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let policy = Policy::Gaussian(GaussianMlpPolicy::new(2, vec![-1.0], vec![1.0], &mut rng));
    let mut batch = small_gaussian_batch(&policy, 2, 8);
    batch.advantages = vec![0.0; 8];
    let (grad, _) = policy_gradient(&policy, &batch, 0.0).unwrap();
    assert!(grad.iter().all(|g| g.abs() < 1e-14));
}

#[test]
fn surrogate_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let policy = Policy::Categorical(CategoricalMlpPolicy::new(1, 2, &mut rng));
    let batch = bandit_batch(&policy, 4);
    let (grad, _) = policy_gradient(&policy, &batch, 0.0).unwrap();

    let theta = policy.flat_params();
    let h = 1e-6;
    let mut policy = policy;
    for i in (0..theta.len()).step_by(97) {
        let mut tp = theta.clone();
        tp[i] += h;
        policy.set_flat_params(&tp);
        let fp = surrogate_value(&policy, &batch, 0.0).unwrap();
        tp[i] -= 2.0 * h;
        policy.set_flat_params(&tp);
        let fm = surrogate_value(&policy, &batch, 0.0).unwrap();
        let num = (fp - fm) / (2.0 * h);
        let denom = grad[i].abs().max(num.abs()).max(1.0);
        assert!(
            ((grad[i] - num) / denom).abs() < 1e-6,
            "param {i}: {} vs {num}",
            grad[i]
        );
    }
    policy.set_flat_params(&theta);
}

#[test]
fn bandit_gradient_raises_favored_logit() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut policy = Policy::Categorical(CategoricalMlpPolicy::new(1, 2, &mut rng));
    let batch = bandit_batch(&policy, 4);
    let p_before = policy.log_prob(&[1.0], &[0.0]).exp();
    let (grad, _) = policy_gradient(&policy, &batch, 0.0).unwrap();
    let theta: Vec<f64> = policy
        .flat_params()
        .iter()
        .zip(&grad)
        .map(|(t, g)| t + 1e-3 * g)
        .collect();
    policy.set_flat_params(&theta);
    let p_after = policy.log_prob(&[1.0], &[0.0]).exp();
    assert!(p_after > p_before, "{p_after} <= {p_before}");
}

#[test]
fn cg_identity_solves_in_one_iteration() {
    let b = vec![1.0, -2.0, 3.0];
    let (x, res) = conjugate_gradient(|v| Ok(v.to_vec()), &b, 1, 1e-10).unwrap();
    for (xi, bi) in x.iter().zip(&b) {
        assert!((xi - bi).abs() < 1e-12);
    }
    assert!(res < 1e-12);
}

#[test]
fn cg_diagonal_solve() {
    let apply = |v: &[f64]| Ok(vec![v[0], 4.0 * v[1]]);
    let (x, _) = conjugate_gradient(apply, &[1.0, 4.0], 10, 1e-12).unwrap();
    assert!((x[0] - 1.0).abs() < 1e-10);
    assert!((x[1] - 1.0).abs() < 1e-10);
}

/// Dense Gaussian-elimination solve, the oracle for the random SPD check.
fn direct_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.iter().cloned().collect();
    let mut rhs = b.to_vec();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap())
            .unwrap();
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            for k in col..n {
                m[row][k] -= f * m[col][k];
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = rhs[row];
        for k in row + 1..n {
            acc -= m[row][k] * x[k];
        }
        x[row] = acc / m[row][row];
    }
    x
}

#[test]
fn cg_matches_direct_solve_on_random_spd_system() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 8;
    // A = M M^T + I is SPD
    let m: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                a[i][j] += m[i][k] * m[j][k];
            }
        }
        a[i][i] += 1.0;
    }
    let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let apply = |v: &[f64]| {
        Ok((0..n)
            .map(|i| (0..n).map(|j| a[i][j] * v[j]).sum())
            .collect())
    };
    let (x, _) = conjugate_gradient(apply, &b, 50, 1e-12).unwrap();
    let exact = direct_solve(&a, &b);
    for i in 0..n {
        let rel = (x[i] - exact[i]).abs() / exact[i].abs().max(1.0);
        assert!(rel < 1e-8, "x[{i}] = {} vs {}", x[i], exact[i]);
    }
}

#[test]
fn fvp_of_zero_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let policy = Policy::Gaussian(GaussianMlpPolicy::new(2, vec![-1.0], vec![1.0], &mut rng));
    let states = vec![0.3, -0.4, 0.1, 0.9];
    let mut fvp = FisherVectorProduct::new(&policy, &states, 2, 0.1).unwrap();
    let v = vec![0.0; fvp.dim()];
    let out = fvp.apply(&v).unwrap();
    assert!(out.iter().all(|x| *x == 0.0));
}

#[test]
fn fvp_reduces_to_damping_on_dead_directions() {
    // all-zero states kill first-layer weight tangents, so along those
    // coordinates F is exactly zero and only damping remains
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let policy = Policy::Gaussian(GaussianMlpPolicy::new(3, vec![-1.0], vec![1.0], &mut rng));
    let states = vec![0.0; 6];
    let damping = 0.25;
    let mut fvp = FisherVectorProduct::new(&policy, &states, 2, damping).unwrap();
    let mut v = vec![0.0; fvp.dim()];
    let w1_len = 3 * 64;
    for (i, vi) in v.iter_mut().take(w1_len).enumerate() {
        *vi = (i % 7) as f64 - 3.0;
    }
    let out = fvp.apply(&v).unwrap();
    for i in 0..fvp.dim() {
        assert!(
            (out[i] - damping * v[i]).abs() < 1e-12,
            "coord {i}: {} vs {}",
            out[i],
            damping * v[i]
        );
    }
}

#[test]
fn fvp_is_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let policy = Policy::Categorical(CategoricalMlpPolicy::new(2, 3, &mut rng));
    let states = vec![0.5, -0.2, 0.1, 0.8, -0.6, 0.0];
    let mut fvp = FisherVectorProduct::new(&policy, &states, 3, 0.0).unwrap();
    let dim = fvp.dim();
    for _ in 0..5 {
        let u: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fu = fvp.apply(&u).unwrap();
        let fv = fvp.apply(&v).unwrap();
        let (a, b) = (dot(&v, &fu), dot(&u, &fv));
        assert!((a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0));
        assert!(dot(&v, &fv) >= -1e-12, "F must be PSD");
    }
}

#[test]
fn fvp_matches_kl_curvature() {
    // KL(theta, theta + eps v) ~ 0.5 eps^2 v^T F v
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for gaussian in [true, false] {
        let mut policy = if gaussian {
            Policy::Gaussian(GaussianMlpPolicy::new(2, vec![-1.0], vec![1.0], &mut rng))
        } else {
            Policy::Categorical(CategoricalMlpPolicy::new(2, 3, &mut rng))
        };
        let batch = 5;
        let states: Vec<f64> = (0..batch * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut fvp = FisherVectorProduct::new(&policy, &states, batch, 0.0).unwrap();
        let dim = fvp.dim();
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let vfv = dot(&v, &fvp.apply(&v).unwrap());

        let eps = 1e-3;
        let theta = policy.flat_params();
        let old = policy.dist(&states, batch);
        let theta_new: Vec<f64> = theta.iter().zip(&v).map(|(t, vi)| t + eps * vi).collect();
        policy.set_flat_params(&theta_new);
        let new = policy.dist(&states, batch);
        let kl = Policy::kl_mean(&old, &new);
        let quad = 0.5 * eps * eps * vfv;
        let rel = (kl - quad).abs() / quad.abs().max(1e-12);
        assert!(rel < 0.05, "kl {kl} vs quadratic {quad} (rel {rel})");
    }
}

#[test]
fn zero_advantage_step_leaves_parameters_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut policy = Policy::Gaussian(GaussianMlpPolicy::new(2, vec![-1.0], vec![1.0], &mut rng));
    let mut value = ValueMlp::new(2, &mut rng);
    let mut batch = small_gaussian_batch(&policy, 10, 12);
    batch.advantages = vec![0.0; 12];
    let before = policy.flat_params();
    let report = trpo_step(&mut policy, &mut value, &batch, &TrpoConfig::default()).unwrap();
    assert!(!report.accepted);
    for (a, b) in before.iter().zip(policy.flat_params().iter()) {
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn bandit_step_increases_favored_action_probability() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut policy = Policy::Categorical(CategoricalMlpPolicy::new(1, 2, &mut rng));
    let mut value = ValueMlp::new(1, &mut rng);
    let batch = bandit_batch(&policy, 8);
    let p_before = policy.log_prob(&[1.0], &[0.0]).exp();
    let config = TrpoConfig::default();
    let report = trpo_step(&mut policy, &mut value, &batch, &config).unwrap();
    assert!(report.accepted);
    assert!(report.surrogate_improvement > 0.0, "monotone surrogate");
    assert!(report.achieved_kl <= 1.5 * config.max_kl, "trust region");
    let p_after = policy.log_prob(&[1.0], &[0.0]).exp();
    assert!(p_after > p_before);
}

#[test]
fn value_fit_reduces_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut policy = Policy::Gaussian(GaussianMlpPolicy::new(2, vec![-1.0], vec![1.0], &mut rng));
    let mut value = ValueMlp::new(2, &mut rng);
    let mut batch = small_gaussian_batch(&policy, 12, 32);
    batch.value_targets = (0..32).map(|i| (i % 5) as f64).collect();
    let config = TrpoConfig {
        value_fit_epochs: 1,
        ..TrpoConfig::default()
    };
    let first = trpo_step(&mut policy, &mut value, &batch, &config).unwrap().value_loss;
    let mut last = first;
    for _ in 0..30 {
        last = trpo_step(&mut policy, &mut value, &batch, &config).unwrap().value_loss;
    }
    assert!(last < first, "value loss {last} did not drop from {first}");
}
