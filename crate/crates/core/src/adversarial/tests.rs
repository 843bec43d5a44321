use super::*;
use crate::envs::Frame;
use crate::rollout::DemoTrajectory;
use rand_chacha::rand_core::SeedableRng;

fn frame_demos(lengths: &[usize]) -> DemoSet {
    let mut trajectories = Vec::new();
    for (i, &frames) in lengths.iter().enumerate() {
        let mut tr = DemoTrajectory::default();
        for t in 0..frames {
            let mut f = Frame::new(8, 8, 1);
            f.set(t % 8, i % 8, 0, 255);
            f.set(7, 7, 0, 9 + 20 * (i as u8)); // disambiguates trajectories
            tr.frames.push(f);
        }
        trajectories.push(tr);
    }
    DemoSet {
        env_id: "point_mass".into(),
        modality: Modality::Frames,
        state_dim: 0,
        action_dim: 0,
        frame_width: 8,
        frame_height: 8,
        frame_channels: 1,
        trajectories,
    }
}

#[test]
fn valid_positions_for_frame_tuples() {
    let demos = frame_demos(&[3]);
    assert_eq!(valid_positions(&demos, Method::Vigan, 2), vec![(0, 0), (0, 1)]);
    assert_eq!(valid_positions(&demos, Method::Vigan, 3), vec![(0, 0)]);
}

#[test]
fn sampling_is_uniform_over_positions() {
    // 10 equal-length trajectories, k = 2: 10 * 4 positions
    let demos = frame_demos(&[5; 10]);
    let env = Env::by_name("point_mass").unwrap();
    let agent = demos_as_agent_trajs(&demos);
    let map = RenderMap::sized(8, 8, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let positions = valid_positions(&demos, Method::Vigan, 2);
    let n_pos = positions.len();
    let draws = 100_000usize;
    let mut counts = vec![0usize; n_pos];
    // identify drawn rows by their pixel signature
    let mut row_of = std::collections::HashMap::new();
    for (p, &(i, t)) in positions.iter().enumerate() {
        let mut key = demos.trajectories[i].frames[t].pixels.clone();
        key.extend_from_slice(&demos.trajectories[i].frames[t + 1].pixels);
        row_of.insert(key, p);
    }
    let mut drawn = 0;
    while drawn < draws {
        let (_, expert) = make_disc_batch(
            Method::Vigan,
            2,
            &env,
            Some(&map),
            &agent,
            &demos,
            500,
            &mut rng,
        )
        .unwrap();
        let row_len = 2 * 8 * 8;
        for b in 0..500 {
            let row = &expert.data()[b * row_len..(b + 1) * row_len];
            let key: Vec<u8> = row.iter().map(|v| ((v + 1.0) * 127.5).round() as u8).collect();
            counts[row_of[&key]] += 1;
            drawn += 1;
        }
    }
    // chi-square against uniform: sum (o - e)^2 / e, dof = n_pos - 1 = 39.
    // 3-sigma-ish bound: mean dof + 3 * sqrt(2 dof) ~ 66
    let expected = draws as f64 / n_pos as f64;
    let chi2: f64 = counts
        .iter()
        .map(|&o| {
            let d = o as f64 - expected;
            d * d / expected
        })
        .sum();
    assert!(chi2 < 66.0, "chi-square {chi2} over {} cells", n_pos);
}

fn demos_as_agent_trajs(demos: &DemoSet) -> Vec<Trajectory> {
    demos
        .trajectories
        .iter()
        .map(|tr| {
            let t = tr.frames.len() - 1;
            Trajectory {
                states: vec![vec![0.0, 0.0]; t + 1],
                actions: vec![vec![0.0, 0.0]; t],
                log_probs: vec![0.0; t],
                frames: Some(tr.frames.clone()),
                est_rewards: vec![0.0; t],
                true_rewards: vec![0.0; t],
                terminated: false,
            }
        })
        .collect()
}

#[test]
fn disc_loss_examples() {
    // uninformed discriminator: both classes at 0.5
    let mut g = Graph::new();
    let a = g.constant(Tensor::vector(vec![0.5, 0.5]));
    let e = g.constant(Tensor::vector(vec![0.5, 0.5]));
    let loss = disc_loss_from_outputs(&mut g, a, e).unwrap();
    assert!((g.value(loss).item() - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);

    // perfect discriminator at the clamp boundary
    let mut g = Graph::new();
    let a = g.constant(Tensor::vector(vec![DISC_EPS]));
    let e = g.constant(Tensor::vector(vec![1.0 - DISC_EPS]));
    let loss = disc_loss_from_outputs(&mut g, a, e).unwrap();
    assert!((g.value(loss).item() - 2.0 * -(1.0f64 - DISC_EPS).ln()).abs() < 1e-12);
    assert!(g.value(loss).item() < 3e-7);

    // hand-built 2-sample batch: expert output 0.8, agent output 0.3
    let mut g = Graph::new();
    let a = g.constant(Tensor::vector(vec![0.3]));
    let e = g.constant(Tensor::vector(vec![0.8]));
    let loss = disc_loss_from_outputs(&mut g, a, e).unwrap();
    let direct = -(0.8f64.ln()) - (0.7f64.ln());
    assert!((g.value(loss).item() - direct).abs() < 1e-12);
    assert!((g.value(loss).item() - 0.5798).abs() < 1e-4);
}

#[test]
fn label_symmetry_swaps_the_two_terms() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::vector(vec![0.2, 0.4]));
    let e = g.constant(Tensor::vector(vec![0.9, 0.7]));
    let loss_ae = disc_loss_from_outputs(&mut g, a, e).unwrap();
    // swapping pools: expert term log D over old agent outputs, etc.
    let loss_ea = disc_loss_from_outputs(&mut g, e, a).unwrap();
    let direct_ae = -(0.9f64.ln() + 0.7f64.ln()) / 2.0 - ((1.0 - 0.2f64).ln() + (1.0 - 0.4f64).ln()) / 2.0;
    let direct_ea = -(0.2f64.ln() + 0.4f64.ln()) / 2.0 - ((1.0 - 0.9f64).ln() + (1.0 - 0.7f64).ln()) / 2.0;
    assert!((g.value(loss_ae).item() - direct_ae).abs() < 1e-12);
    assert!((g.value(loss_ea).item() - direct_ea).abs() < 1e-12);
}

#[test]
fn reward_examples() {
    let eps = 1e-7;
    assert!((reward_from_disc(0.5, eps) - std::f64::consts::LN_2).abs() < 1e-12);
    let near_zero = reward_from_disc(eps, eps);
    assert!(near_zero > 0.0 && near_zero < 2e-7);
    let max = reward_from_disc(1.0 - eps, eps);
    assert!((max - 16.118).abs() < 1e-3);
    // positivity and monotonicity across the whole range
    let mut prev = 0.0;
    for i in 1..100 {
        let r = reward_from_disc(i as f64 / 100.0, eps);
        assert!(r > 0.0 && r <= -(eps.ln()));
        assert!(r > prev);
        prev = r;
    }
}

#[test]
fn one_disc_step_separates_a_separable_batch() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut disc = Discriminator::Mlp(MlpDiscriminator::new(2, &mut rng));
    let mut adam = Adam::new(1e-3);
    let agent = Tensor::matrix(4, 2, vec![-1.0, -1.0, -0.8, -1.2, -1.1, -0.9, -1.0, -0.7]).unwrap();
    let expert = Tensor::matrix(4, 2, vec![1.0, 1.0, 0.8, 1.2, 1.1, 0.9, 1.0, 0.7]).unwrap();
    let first = disc_step(&mut disc, &mut adam, &agent, &expert).unwrap();
    let second = disc_step(&mut disc, &mut adam, &agent, &expert).unwrap();
    assert!(
        second.loss < first.loss,
        "{} !< {}",
        second.loss,
        first.loss
    );
}

#[test]
fn modality_validation_rejects_mismatches() {
    let demos = frame_demos(&[4]);
    let env = Env::by_name("point_mass").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let err = make_disc_batch(
        Method::Gail,
        2,
        &env,
        None,
        &demos_as_agent_trajs(&demos),
        &demos,
        4,
        &mut rng,
    );
    assert!(matches!(err, Err(AdvError::Modality(_))));
    assert!(Method::Sigan.accepts(Modality::StateOnly));
    assert!(Method::Sigan.accepts(Modality::StateAction));
    assert!(!Method::Vigan.accepts(Modality::StateOnly));
}

#[test]
fn frozen_uninformed_discriminator_freezes_the_policy() {
    // a discriminator frozen at D = 0.5 yields constant rewards ln 2;
    // any policy change stays bounded by the trust region
    let env = Env::by_name("point_mass").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut policy = Policy::Gaussian(crate::models::GaussianMlpPolicy::new(
        2,
        vec![-1.0, -1.0],
        vec![1.0, 1.0],
        &mut rng,
    ));
    let mut value = ValueMlp::new(2, &mut rng);
    let mut mlp_disc = MlpDiscriminator::new(4, &mut rng);
    let out = mlp_disc.mlp.layers.last_mut().unwrap();
    out.w.value.data_mut().fill(0.0); // logits 0 -> D = 0.5 exactly
    let disc = Discriminator::Mlp(mlp_disc);

    let mut trajs = collect(&policy, &env, None, 100, 1, 0).unwrap();
    label_rewards(Method::Sigan, &disc, &mut trajs, 2, &env, None, 1e-7).unwrap();
    for t in &trajs {
        for r in &t.est_rewards {
            assert!((r - std::f64::consts::LN_2).abs() < 1e-12, "constant ln 2, got {r}");
        }
    }
    let old_dist = policy.dist(&trajs[0].states[0].clone(), 1);
    let batch = advantage_batch(&trajs, &value, 0.99, 0.95, RewardStream::Estimated).unwrap();
    let config = TrpoConfig::default();
    let report = trpo_step(&mut policy, &mut value, &batch, &config).unwrap();
    if report.accepted {
        assert!(report.achieved_kl <= config.max_kl);
    }
    let new_dist = policy.dist(&trajs[0].states[0].clone(), 1);
    let kl = Policy::kl_mean(&old_dist, &new_dist);
    assert!(kl <= 10.0 * config.max_kl, "single-state kl {kl} unexpectedly large");
}

#[test]
fn k3_labeling_pads_the_final_transition() {
    let env = Env::by_name("point_mass").unwrap();
    let map = RenderMap::sized(16, 16, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let policy = Policy::Gaussian(crate::models::GaussianMlpPolicy::new(
        2,
        vec![-1.0, -1.0],
        vec![1.0, 1.0],
        &mut rng,
    ));
    let mut trajs = collect(&policy, &env, Some(&map), 50, 1, 3).unwrap();
    let disc = Discriminator::Conv(ConvDiscriminator::new(3, 16, 16, &mut rng));
    label_rewards(Method::Vigan, &disc, &mut trajs, 3, &env, Some(&map), 1e-7).unwrap();
    for t in &trajs {
        assert_eq!(t.est_rewards.len(), t.len());
        let n = t.est_rewards.len();
        assert_eq!(t.est_rewards[n - 1], t.est_rewards[n - 2]);
        assert!(t.est_rewards.iter().all(|r| *r > 0.0));
    }
}
