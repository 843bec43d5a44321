use super::*;
use crate::envs::{GridMdp, PointMass, RenderMode};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn single_state_occupancy_is_geometric_series() {
    let mdp = GridMdp::new(1, 1, vec![1.0], vec![0.0], vec![1.0], 0.9).unwrap();
    let occ = occupancy(&mdp, &uniform_policy(1, 1)).unwrap();
    assert!((occ.visitation[0] - 10.0).abs() < 1e-9);
    assert!((occ.sa(0, 0) - 10.0).abs() < 1e-9);
}

#[test]
fn two_state_cycle_occupancy() {
    let mdp = GridMdp::cycle2(0.5);
    let occ = occupancy(&mdp, &uniform_policy(2, 1)).unwrap();
    assert!((occ.visitation[0] - 4.0 / 3.0).abs() < 1e-12);
    assert!((occ.visitation[1] - 2.0 / 3.0).abs() < 1e-12);
}

#[test]
fn symmetric_mdp_has_flat_visitation() {
    // symmetric two-state chain with symmetric start
    let p = vec![0.3, 0.7, 0.7, 0.3];
    let mdp = GridMdp::new(2, 1, p, vec![0.0, 0.0], vec![0.5, 0.5], 0.5).unwrap();
    let occ = occupancy(&mdp, &uniform_policy(2, 1)).unwrap();
    assert!((occ.visitation[0] - 1.0).abs() < 1e-12);
    assert!((occ.visitation[1] - 1.0).abs() < 1e-12);
}

#[test]
fn occupancy_mass_is_inverse_horizon() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..10 {
        let mdp = GridMdp::random(7, 3, 0.9, &mut rng);
        let occ = occupancy(&mdp, &uniform_policy(7, 3)).unwrap();
        assert!((occ.total_mass() - 10.0).abs() < 1e-9);
        let ss_mass: f64 = occ.rho_ss.iter().sum();
        assert!((ss_mass - 10.0).abs() < 1e-9, "transition mass conserved");
    }
}

#[test]
fn non_stochastic_policy_rejected() {
    let mdp = GridMdp::cycle2(0.5);
    let bad = vec![vec![0.7], vec![1.0]];
    assert!(matches!(
        occupancy(&mdp, &bad),
        Err(OracleError::NonStochasticPolicy(0))
    ));
}

#[test]
fn jsd_examples() {
    assert_eq!(js_divergence(&[0.5, 0.5], &[0.5, 0.5]).unwrap(), 0.0);
    let max = js_divergence(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
    assert!((max - std::f64::consts::LN_2).abs() < 1e-12);

    // direct summation oracle for p=(0.5,0.5), q=(0.9,0.1)
    let (p, q): ([f64; 2], [f64; 2]) = ([0.5, 0.5], [0.9, 0.1]);
    let mut direct = 0.0;
    for i in 0..2 {
        let m = 0.5 * (p[i] + q[i]);
        direct += 0.5 * p[i] * (p[i] / m).ln() + 0.5 * q[i] * (q[i] / m).ln();
    }
    assert!((js_divergence(&p, &q).unwrap() - direct).abs() < 1e-12);

    assert!(js_divergence(&[-0.1, 1.1], &[0.5, 0.5]).is_err());
}

#[test]
fn bayes_discriminator_examples() {
    let mut a = BTreeMap::new();
    let mut e = BTreeMap::new();
    a.insert((0, 1), 0.2);
    e.insert((0, 1), 0.8);
    a.insert((1, 0), 0.5);
    e.insert((1, 0), 0.5);
    let d = bayes_discriminator(&a, &e);
    assert!((d.get((0, 1)) - 0.8).abs() < 1e-12);
    assert_eq!(d.get((1, 0)), 0.5);
    assert_eq!(d.get((7, 7)), 0.5, "zero-mass convention");
}

#[test]
fn bayes_discriminator_matches_monte_carlo_class_frequencies() {
    let mdp = GridMdp::chain(4, 0.9);
    let expert = {
        // mostly right
        let mut p = vec![vec![0.1, 0.9]; 4];
        p[3] = vec![0.05, 0.95];
        p
    };
    let agent = uniform_policy(4, 2);
    let occ_a = occupancy(&mdp, &agent).unwrap();
    let occ_e = occupancy(&mdp, &expert).unwrap();
    let exact = bayes_discriminator(&transition_map(&occ_a), &transition_map(&occ_e));

    // Monte Carlo: discounted transition frequencies from both policies
    let horizon = 140; // 0.9^140 ~ 4e-7
    let episodes = 1_000_000 / horizon;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut sim = |policy: &[Vec<f64>]| {
        let mut mass = BTreeMap::new();
        for _ in 0..episodes {
            let mut s = mdp.sample_p0(&mut rng);
            let mut disc = 1.0;
            for _ in 0..horizon {
                let u: f64 = rand::Rng::gen(&mut rng);
                let a = if u < policy[s][0] { 0 } else { 1 };
                let s2 = mdp.sample_next(s, a, &mut rng);
                *mass.entry((s as u64, s2 as u64)).or_insert(0.0) += disc;
                disc *= mdp.gamma;
                s = s2;
            }
        }
        mass
    };
    let mc_a = sim(&agent);
    let mc_e = sim(&expert);
    let mc = bayes_discriminator(&mc_a, &mc_e);
    for (key, d_exact) in exact.iter() {
        let d_mc = mc.get(*key);
        assert!(
            (d_exact - d_mc).abs() < 0.01,
            "transition {key:?}: exact {d_exact} vs mc {d_mc}"
        );
    }
}

fn point_mass_grid_frames(n: usize, mode: RenderMode) -> Vec<Frame> {
    let env = PointMass::new();
    let map = RenderMap::sized(64, 64, 3).with_mode(mode);
    let mut frames = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let x = -1.0 + 2.0 * i as f64 / (n - 1) as f64;
            let y = -1.0 + 2.0 * j as f64 / (n - 1) as f64;
            frames.push(env.render(&[x, y], &map));
        }
    }
    frames
}

#[test]
fn injective_render_has_no_collisions_on_50x50_grid() {
    let frames = point_mass_grid_frames(50, RenderMode::Injective);
    let report = injectivity_check(&frames);
    assert!(report.injective, "{} collisions", report.collisions.len());
    // 2500 distinct frames means 2500 distinct hashes here
    let hashes: std::collections::BTreeSet<u64> = frames.iter().map(frame_hash).collect();
    assert_eq!(hashes.len(), 2500);
}

#[test]
fn occluding_render_collides_under_the_occluder() {
    let env = PointMass::new();
    let map = RenderMap::sized(64, 64, 3).with_mode(RenderMode::Occluding);
    let frames = vec![
        env.render(&[0.6, 0.3], &map),
        env.render(&[0.8, -0.4], &map),
        env.render(&[-0.5, 0.0], &map),
    ];
    let report = injectivity_check(&frames);
    assert!(!report.injective);
    assert_eq!(report.collisions, vec![(0, 1)]);
}

#[test]
fn axis_degenerate_collides_exactly_on_the_ignored_coordinate() {
    let n = 8;
    let frames = point_mass_grid_frames(n, RenderMode::AxisDegenerate);
    let report = injectivity_check(&frames);
    assert!(!report.injective);
    // states are indexed i*n + j with j the ignored y coordinate: every
    // pair inside an x-slice collides, nothing else does
    let expected = n * (n * (n - 1)) / 2;
    assert_eq!(report.collisions.len(), expected);
    for (a, b) in &report.collisions {
        assert_eq!(a / n, b / n, "collision across x slices: {a} {b}");
    }
}

fn lattice_policies() -> (GridMdp, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mdp = GridMdp::lattice(5, 5, 0.2, 0.9);
    let agent = uniform_policy(25, 4);
    let expert = lattice_expert_policy(5, 5, 0.7);
    (mdp, agent, expert)
}

#[test]
fn injective_map_makes_image_and_state_discriminators_equal() {
    let (mdp, agent, expert) = lattice_policies();
    let map = RenderMap::sized(64, 64, 3);
    let report = equivalence_check(&mdp, &agent, &expert, &map).unwrap();
    assert!(
        report.max_abs_diff <= 1e-12,
        "max diff {}",
        report.max_abs_diff
    );
    assert!(!report.rows.is_empty());
}

#[test]
fn occluding_map_breaks_the_equivalence() {
    let (mdp, agent, expert) = lattice_policies();
    let map = RenderMap::sized(64, 64, 3).with_mode(RenderMode::Occluding);
    let report = equivalence_check(&mdp, &agent, &expert, &map).unwrap();
    assert!(
        report.max_abs_diff > 1e-3,
        "occlusion should merge transitions with different likelihood ratios, diff {}",
        report.max_abs_diff
    );
    let worst = report.worst.unwrap();
    assert!((worst.d_state - worst.d_image).abs() > 1e-3);
}

#[test]
fn identical_policies_make_both_discriminators_uninformative() {
    let (mdp, agent, _) = lattice_policies();
    for mode in [RenderMode::Injective, RenderMode::Occluding] {
        let map = RenderMap::sized(64, 64, 3).with_mode(mode);
        let report = equivalence_check(&mdp, &agent, &agent, &map).unwrap();
        assert_eq!(report.max_abs_diff, 0.0);
        for row in &report.rows {
            assert_eq!(row.d_state, 0.5);
            assert_eq!(row.d_image, 0.5);
        }
    }
}

#[test]
fn pushforward_conserves_mass_exactly() {
    let (mdp, agent, expert) = lattice_policies();
    let map = RenderMap::sized(64, 64, 3).with_mode(RenderMode::Occluding);
    let hashes: Vec<u64> = (0..25).map(|s| frame_hash(&mdp.render(s, &map))).collect();
    for policy in [&agent, &expert] {
        let occ = occupancy(&mdp, policy).unwrap();
        let state_mass: f64 = transition_map(&occ).values().sum();
        let image_mass: f64 = pushforward_map(&occ, &hashes).values().sum();
        assert!((state_mass - image_mass).abs() < 1e-12);
    }
}

#[test]
fn zero_jsd_iff_uninformative_discriminator() {
    let (mdp, agent, expert) = lattice_policies();
    let occ_a = occupancy(&mdp, &agent).unwrap();
    let occ_e = occupancy(&mdp, &expert).unwrap();

    let jsd_same = js_divergence(&occ_a.normalized_sa(), &occ_a.normalized_sa()).unwrap();
    assert_eq!(jsd_same, 0.0);
    let d_same = bayes_discriminator(&transition_map(&occ_a), &transition_map(&occ_a));
    assert!(d_same.iter().all(|(_, d)| *d == 0.5));

    let jsd_diff = js_divergence(&occ_a.normalized_sa(), &occ_e.normalized_sa()).unwrap();
    assert!(jsd_diff > 0.0);
    let d_diff = bayes_discriminator(&transition_map(&occ_a), &transition_map(&occ_e));
    assert!(d_diff.iter().any(|(_, d)| (*d - 0.5).abs() > 1e-6));
}
