use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vigan::envs::Env;
use vigan::models::{CategoricalMlpPolicy, Policy, ValueMlp};
use vigan::rollout::{advantage_batch, collect, evaluate, RewardStream};
use vigan::trpo::{trpo_step, TrpoConfig};

#[test]
fn scratch_cartpole_expert() {
    let t0 = std::time::Instant::now();
    for seed in [0u64, 1, 2] {
        let env = Env::by_name("cartpole_analog").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut policy = Policy::Categorical(CategoricalMlpPolicy::new(4, 2, &mut rng));
        let mut value = ValueMlp::new(4, &mut rng);
        let config = TrpoConfig::default();
        let mut solved_at = None;
        for iter in 0..200 {
            let trajs = collect(&policy, &env, None, 2000, 2, seed * 1000 + iter).unwrap();
            let batch = advantage_batch(&trajs, &value, 0.99, 0.95, RewardStream::True).unwrap();
            let report = trpo_step(&mut policy, &mut value, &batch, &config).unwrap();
            let mean_ret: f64 = trajs.iter().map(|t| t.true_return()).sum::<f64>() / trajs.len() as f64;
            if iter % 10 == 0 {
                eprintln!("seed {seed} iter {iter}: rollout return {mean_ret:.1} kl {:.4} acc {} vloss {:.1}", report.achieved_kl, report.accepted, report.value_loss);
            }
            if mean_ret > 195.0 {
                let (eval_mean, _) = evaluate(&policy, &env, 20, 999).unwrap();
                eprintln!("seed {seed} iter {iter}: rollout {mean_ret:.1} eval {eval_mean:.1}");
                if eval_mean >= 195.0 {
                    solved_at = Some(iter);
                    break;
                }
            }
        }
        eprintln!("seed {seed} solved at {:?}  elapsed {:.1}s", solved_at, t0.elapsed().as_secs_f64());
        assert!(solved_at.is_some(), "seed {seed} failed");
    }
}
