//! Tabular MDPs with explicit transition tensors, plus an adapter that
//! presents them through the neural-policy environment interface with
//! one-hot states.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::frame::Frame;
use super::render::{RenderMap, RenderMode};
use super::{ActionSpace, EnvError, EnvId, EnvSpec, Step};

const ROW_TOL: f64 = 1e-12;

/// Finite MDP: transition tensor P[s][a][s'], reward table r[s][a],
/// initial distribution p0, discount gamma.
#[derive(Debug, Clone)]
pub struct GridMdp {
    pub n_states: usize,
    pub n_actions: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
    pub p0: Vec<f64>,
    pub gamma: f64,
}

impl GridMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        p0: Vec<f64>,
        gamma: f64,
    ) -> Result<Self, EnvError> {
        if transition.len() != n_states * n_actions * n_states
            || reward.len() != n_states * n_actions
            || p0.len() != n_states
        {
            return Err(EnvError::BadConfig("mdp table sizes inconsistent".into()));
        }
        if !(0.0 < gamma && gamma < 1.0) {
            return Err(EnvError::BadConfig(format!("gamma {gamma} outside (0,1)")));
        }
        for s in 0..n_states {
            for a in 0..n_actions {
                let row = &transition[(s * n_actions + a) * n_states..][..n_states];
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > ROW_TOL || row.iter().any(|&p| p < 0.0) {
                    return Err(EnvError::BadConfig(format!(
                        "P[{s}][{a}] is not a distribution (sum {sum})"
                    )));
                }
            }
        }
        let p0_sum: f64 = p0.iter().sum();
        if (p0_sum - 1.0).abs() > ROW_TOL || p0.iter().any(|&p| p < 0.0) {
            return Err(EnvError::BadConfig(format!("p0 sums to {p0_sum}")));
        }
        Ok(GridMdp {
            n_states,
            n_actions,
            transition,
            reward,
            p0,
            gamma,
        })
    }

    pub fn p(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.transition[(s * self.n_actions + a) * self.n_states + s2]
    }

    pub fn r(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    pub fn sample_p0(&self, rng: &mut ChaCha8Rng) -> usize {
        sample_index(&self.p0, rng)
    }

    pub fn sample_next(&self, s: usize, a: usize, rng: &mut ChaCha8Rng) -> usize {
        let row = &self.transition[(s * self.n_actions + a) * self.n_states..][..self.n_states];
        sample_index(row, rng)
    }

    /// Two states, one action, deterministic cycle s0 -> s1 -> s0.
    pub fn cycle2(gamma: f64) -> Self {
        GridMdp::new(
            2,
            1,
            vec![0.0, 1.0, 1.0, 0.0],
            vec![1.0, 0.0],
            vec![1.0, 0.0],
            gamma,
        )
        .unwrap()
    }

    /// Chain of n states with left/right actions; reward for sitting at the
    /// right end. Deterministic moves, clamped at both ends.
    pub fn chain(n: usize, gamma: f64) -> Self {
        let n_actions = 2;
        let mut p = vec![0.0; n * n_actions * n];
        let mut r = vec![0.0; n * n_actions];
        for s in 0..n {
            for a in 0..n_actions {
                let next = if a == 0 { s.saturating_sub(1) } else { (s + 1).min(n - 1) };
                p[(s * n_actions + a) * n + next] = 1.0;
                if s == n - 1 {
                    r[s * n_actions + a] = 1.0;
                }
            }
        }
        let mut p0 = vec![0.0; n];
        p0[0] = 1.0;
        GridMdp::new(n, n_actions, p, r, p0, gamma).unwrap()
    }

    /// w x h lattice with 4 move actions (N, E, S, W). Moves succeed with
    /// probability 1 - slip and stay in place otherwise; walls clamp.
    /// Reward 1 in the far corner.
    pub fn lattice(w: usize, h: usize, slip: f64, gamma: f64) -> Self {
        let n = w * h;
        let n_actions = 4;
        let mut p = vec![0.0; n * n_actions * n];
        let mut r = vec![0.0; n * n_actions];
        let goal = n - 1;
        for s in 0..n {
            let (row, col) = (s / w, s % w);
            for a in 0..n_actions {
                let (nr, nc) = match a {
                    0 => (row.saturating_sub(1), col),
                    1 => (row, (col + 1).min(w - 1)),
                    2 => ((row + 1).min(h - 1), col),
                    _ => (row, col.saturating_sub(1)),
                };
                let next = nr * w + nc;
                p[(s * n_actions + a) * n + next] += 1.0 - slip;
                p[(s * n_actions + a) * n + s] += slip;
                if s == goal {
                    r[s * n_actions + a] = 1.0;
                }
            }
        }
        let mut p0 = vec![0.0; n];
        p0[0] = 1.0;
        GridMdp::new(n, n_actions, p, r, p0, gamma).unwrap()
    }

    /// Random dense MDP with strictly positive transition probabilities.
    pub fn random(n_states: usize, n_actions: usize, gamma: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut p = vec![0.0; n_states * n_actions * n_states];
        for s in 0..n_states {
            for a in 0..n_actions {
                let row = &mut p[(s * n_actions + a) * n_states..][..n_states];
                let mut sum = 0.0;
                for v in row.iter_mut() {
                    *v = rng.gen_range(0.05..1.0);
                    sum += *v;
                }
                for v in row.iter_mut() {
                    *v /= sum;
                }
                // renormalize exactly so the row-sum invariant holds
                let s2: f64 = row.iter().sum();
                row[n_states - 1] += 1.0 - s2;
            }
        }
        let r: Vec<f64> = (0..n_states * n_actions).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mut p0: Vec<f64> = (0..n_states).map(|_| rng.gen_range(0.05..1.0)).collect();
        let sum: f64 = p0.iter().sum();
        for v in p0.iter_mut() {
            *v /= sum;
        }
        let s2: f64 = p0.iter().sum();
        p0[n_states - 1] += 1.0 - s2;
        GridMdp::new(n_states, n_actions, p, r, p0, gamma).unwrap()
    }

    /// Cell layout used by the renderer: (columns, rows).
    pub fn layout(&self) -> (usize, usize) {
        let cols = (self.n_states as f64).sqrt().ceil() as usize;
        let rows = self.n_states.div_ceil(cols);
        (cols, rows)
    }

    pub fn render(&self, state_idx: usize, map: &RenderMap) -> Frame {
        let mut canvas = map.canvas();
        let (cols, rows) = self.layout();
        let (w, h) = (map.width as f64, map.height as f64);
        let cell_w = w / cols as f64;
        let cell_h = h / rows as f64;
        let (row, col) = (state_idx / cols, state_idx % cols);
        let cx = (col as f64 + 0.5) * cell_w;
        let cy = if matches!(map.mode, RenderMode::AxisDegenerate) {
            h / 2.0 // the row coordinate is invisible in this mode
        } else {
            (row as f64 + 0.5) * cell_h
        };
        canvas.draw_disk(cx, cy, 0.3 * cell_w.min(cell_h), map.palette.agent);
        if matches!(map.mode, RenderMode::Occluding) {
            map.apply_occluder(&mut canvas);
        }
        canvas.frame
    }
}

fn sample_index(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Environment adapter: one-hot states, categorical actions.
#[derive(Debug, Clone)]
pub struct GridEnv {
    pub mdp: GridMdp,
    spec: EnvSpec,
}

impl GridEnv {
    pub fn new(mdp: GridMdp, horizon: usize) -> Self {
        let spec = EnvSpec {
            id: EnvId::GridMdp,
            state_dim: mdp.n_states,
            action_space: ActionSpace::Discrete(mdp.n_actions),
            horizon,
            gamma: mdp.gamma,
        };
        GridEnv { mdp, spec }
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn one_hot(&self, idx: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.mdp.n_states];
        v[idx] = 1.0;
        v
    }

    pub fn state_index(&self, state: &[f64]) -> usize {
        let mut best = 0;
        for i in 1..state.len() {
            if state[i] > state[best] {
                best = i;
            }
        }
        best
    }

    pub fn reset(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.one_hot(self.mdp.sample_p0(rng))
    }

    pub fn step(&self, state: &[f64], action_idx: usize, rng: &mut ChaCha8Rng) -> Step {
        let s = self.state_index(state);
        let next = self.mdp.sample_next(s, action_idx, rng);
        Step {
            next_state: self.one_hot(next),
            reward: self.mdp.r(s, action_idx),
            terminated: false,
        }
    }

    pub fn render(&self, state: &[f64], map: &RenderMap) -> Frame {
        self.mdp.render(self.state_index(state), map)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn cycle_is_deterministic() {
        let mdp = GridMdp::cycle2(0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            assert_eq!(mdp.sample_next(0, 0, &mut rng), 1);
            assert_eq!(mdp.sample_next(1, 0, &mut rng), 0);
        }
    }

    #[test]
    fn random_mdp_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let mdp = GridMdp::random(6, 3, 0.9, &mut rng);
            for s in 0..6 {
                for a in 0..3 {
                    let sum: f64 = (0..6).map(|s2| mdp.p(s, a, s2)).sum();
                    assert!((sum - 1.0).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn bad_rows_are_rejected() {
        let err = GridMdp::new(1, 1, vec![0.5], vec![0.0], vec![1.0], 0.9);
        assert!(err.is_err());
    }

    #[test]
    fn lattice_shape_and_goal() {
        let mdp = GridMdp::lattice(5, 5, 0.1, 0.9);
        assert_eq!(mdp.n_states, 25);
        assert_eq!(mdp.layout(), (5, 5));
        assert_eq!(mdp.r(24, 0), 1.0);
        assert_eq!(mdp.r(0, 0), 0.0);
    }
}
