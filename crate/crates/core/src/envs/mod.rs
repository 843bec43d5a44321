//! Desk-scale environments with closed-form dynamics, true rewards (used
//! only for expert training and evaluation), and the render mapping.
//! Environments are value-like: dynamics are pure functions of
//! (state, action, rng stream) so rollout workers can clone them freely.

pub mod cartpole;
pub mod frame;
pub mod grid;
pub mod pendulum;
pub mod point_mass;
pub mod raster;
pub mod render;

pub use cartpole::Cartpole;
pub use frame::{crop_shake, read_ppm, resize_and_crop, write_ppm, CropRect, Frame};
pub use grid::{GridEnv, GridMdp};
pub use pendulum::Pendulum;
pub use point_mass::PointMass;
pub use render::{FracRect, Palette, RenderMap, RenderMode};

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("unknown environment `{0}`")]
    UnknownEnv(String),
    #[error("empty crop rect")]
    EmptyRect,
    #[error("crop rect out of bounds")]
    RectOutOfBounds,
    #[error("malformed ppm: {0}")]
    MalformedPpm(String),
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error("io error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvId {
    CartpoleAnalog,
    PendulumAnalog,
    PointMass,
    GridMdp,
}

impl EnvId {
    pub fn as_str(&self) -> &'static str {
        match self {
            EnvId::CartpoleAnalog => "cartpole_analog",
            EnvId::PendulumAnalog => "pendulum_analog",
            EnvId::PointMass => "point_mass",
            EnvId::GridMdp => "grid_mdp",
        }
    }
}

impl std::fmt::Display for EnvId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub enum ActionSpace {
    Discrete(usize),
    Box { low: Vec<f64>, high: Vec<f64> },
}

impl ActionSpace {
    pub fn action_dim(&self) -> usize {
        match self {
            ActionSpace::Discrete(_) => 1,
            ActionSpace::Box { low, .. } => low.len(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EnvSpec {
    pub id: EnvId,
    pub state_dim: usize,
    pub action_space: ActionSpace,
    pub horizon: usize,
    pub gamma: f64,
}

/// One transition. `terminated` is the state-based termination predicate;
/// horizon truncation is the rollout layer's concern.
#[derive(Debug, Clone)]
pub struct Step {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub terminated: bool,
}

#[derive(Debug, Clone)]
pub enum Env {
    Cartpole(Cartpole),
    Pendulum(Pendulum),
    PointMass(PointMass),
    Grid(GridEnv),
}

impl Env {
    pub fn by_name(name: &str) -> Result<Env, EnvError> {
        match name {
            "cartpole_analog" => Ok(Env::Cartpole(Cartpole::new())),
            "pendulum_analog" => Ok(Env::Pendulum(Pendulum::new())),
            "point_mass" => Ok(Env::PointMass(PointMass::new())),
            "grid_mdp" => Ok(Env::Grid(GridEnv::new(GridMdp::lattice(5, 5, 0.2, 0.9), 40))),
            other => Err(EnvError::UnknownEnv(other.to_string())),
        }
    }

    pub fn spec(&self) -> &EnvSpec {
        match self {
            Env::Cartpole(e) => e.spec(),
            Env::Pendulum(e) => e.spec(),
            Env::PointMass(e) => e.spec(),
            Env::Grid(e) => e.spec(),
        }
    }

    pub fn reset(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            Env::Cartpole(e) => e.reset(rng),
            Env::Pendulum(e) => e.reset(rng),
            Env::PointMass(e) => e.reset(rng),
            Env::Grid(e) => e.reset(rng),
        }
    }

    pub fn step(
        &self,
        state: &[f64],
        action: &[f64],
        rng: &mut ChaCha8Rng,
    ) -> Result<Step, EnvError> {
        if state.iter().any(|v| !v.is_finite()) {
            return Err(EnvError::NonFinite("state"));
        }
        if action.iter().any(|v| !v.is_finite()) {
            return Err(EnvError::NonFinite("action"));
        }
        match self {
            Env::Cartpole(e) => Ok(e.step(state, discrete_index(&self.spec().action_space, action)?)),
            Env::Pendulum(e) => Ok(e.step(state, action)),
            Env::PointMass(e) => Ok(e.step(state, action)),
            Env::Grid(e) => {
                let idx = discrete_index(&self.spec().action_space, action)?;
                Ok(e.step(state, idx, rng))
            }
        }
    }

    pub fn render(&self, state: &[f64], map: &RenderMap) -> Frame {
        match self {
            Env::Cartpole(e) => e.render(state, map),
            Env::Pendulum(e) => e.render(state, map),
            Env::PointMass(e) => e.render(state, map),
            Env::Grid(e) => e.render(state, map),
        }
    }

    /// Reachable box per state coordinate, used by renderers and samplers.
    pub fn state_bounds(&self) -> Vec<(f64, f64)> {
        match self {
            Env::Cartpole(e) => e.state_bounds(),
            Env::Pendulum(e) => e.state_bounds(),
            Env::PointMass(e) => e.state_bounds(),
            Env::Grid(e) => vec![(0.0, 1.0); e.spec().state_dim],
        }
    }

    /// A state drawn uniformly from the reachable manifold (pendulum states
    /// stay on the cos/sin circle).
    pub fn sample_state_uniform(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        use rand::Rng;
        match self {
            Env::Pendulum(_) => {
                let theta: f64 = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
                let omega: f64 = rng.gen_range(-pendulum::MAX_SPEED..pendulum::MAX_SPEED);
                vec![theta.cos(), theta.sin(), omega]
            }
            Env::Grid(e) => {
                let idx = rng.gen_range(0..e.mdp.n_states);
                e.one_hot(idx)
            }
            _ => self
                .state_bounds()
                .iter()
                .map(|(lo, hi)| rng.gen_range(*lo..*hi))
                .collect(),
        }
    }

    /// The declared quantization grid for injectivity checks: `per_dim`
    /// levels per free coordinate (grid MDPs enumerate all states).
    pub fn quantized_state_grid(&self, per_dim: usize) -> Vec<Vec<f64>> {
        let lin = |lo: f64, hi: f64| -> Vec<f64> {
            (0..per_dim)
                .map(|i| lo + (hi - lo) * i as f64 / (per_dim - 1) as f64)
                .collect()
        };
        match self {
            Env::Cartpole(e) => {
                let b = e.state_bounds();
                let axes: Vec<Vec<f64>> = b.iter().map(|&(lo, hi)| lin(lo, hi)).collect();
                let mut out = Vec::new();
                for &x in &axes[0] {
                    for &xd in &axes[1] {
                        for &th in &axes[2] {
                            for &thd in &axes[3] {
                                out.push(vec![x, xd, th, thd]);
                            }
                        }
                    }
                }
                out
            }
            Env::Pendulum(_) => {
                let thetas = lin(-std::f64::consts::PI * 0.999, std::f64::consts::PI * 0.999);
                let omegas = lin(-pendulum::MAX_SPEED, pendulum::MAX_SPEED);
                let mut out = Vec::new();
                for &t in &thetas {
                    for &o in &omegas {
                        out.push(vec![t.cos(), t.sin(), o]);
                    }
                }
                out
            }
            Env::PointMass(_) => {
                let axis = lin(-1.0, 1.0);
                let mut out = Vec::new();
                for &x in &axis {
                    for &y in &axis {
                        out.push(vec![x, y]);
                    }
                }
                out
            }
            Env::Grid(e) => (0..e.mdp.n_states).map(|i| e.one_hot(i)).collect(),
        }
    }
}

fn discrete_index(space: &ActionSpace, action: &[f64]) -> Result<usize, EnvError> {
    let n = match space {
        ActionSpace::Discrete(n) => *n,
        _ => unreachable!("discrete_index on box space"),
    };
    if action.len() != 1 {
        return Err(EnvError::InvalidAction(format!(
            "expected 1 component, got {}",
            action.len()
        )));
    }
    let rounded = action[0].round();
    if (action[0] - rounded).abs() > 1e-9 || rounded < 0.0 || rounded >= n as f64 {
        return Err(EnvError::InvalidAction(format!(
            "{} is not a valid index into {n} actions",
            action[0]
        )));
    }
    Ok(rounded as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn env_lookup_by_name() {
        for name in ["cartpole_analog", "pendulum_analog", "point_mass", "grid_mdp"] {
            let env = Env::by_name(name).unwrap();
            assert_eq!(env.spec().id.as_str(), name);
        }
        assert!(Env::by_name("hopper").is_err());
    }

    #[test]
    fn step_rejects_non_finite_inputs() {
        let env = Env::by_name("point_mass").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(env.step(&[f64::NAN, 0.0], &[0.0, 0.0], &mut rng).is_err());
        assert!(env.step(&[0.0, 0.0], &[f64::INFINITY, 0.0], &mut rng).is_err());
    }

    #[test]
    fn dynamics_are_deterministic_across_runs() {
        let env = Env::by_name("cartpole_analog").unwrap();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let mut s = env.reset(&mut rng);
            let mut trace = Vec::new();
            for t in 0..50 {
                let step = env.step(&s, &[(t % 2) as f64], &mut rng).unwrap();
                s = step.next_state.clone();
                trace.push(s.clone());
                if step.terminated {
                    break;
                }
            }
            trace
        };
        let (a, b) = (run(), run());
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            for (u, v) in x.iter().zip(y) {
                assert!((u - v).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn discrete_actions_validated() {
        let env = Env::by_name("cartpole_analog").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = env.reset(&mut rng);
        assert!(env.step(&s, &[0.5], &mut rng).is_err());
        assert!(env.step(&s, &[2.0], &mut rng).is_err());
        assert!(env.step(&s, &[1.0], &mut rng).is_ok());
    }
}
