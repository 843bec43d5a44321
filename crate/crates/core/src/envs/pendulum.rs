//! Torque-limited pendulum stabilization, Euler integrated at dt = 0.02.
//! The observed state is (cos th, sin th, omega); reward is
//! -(th^2 + 0.1 omega^2 + 0.001 u^2), maximal at the upright rest state.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::frame::Frame;
use super::render::{draw_gauges, RenderMap, RenderMode};
use super::{ActionSpace, EnvId, EnvSpec, Step};

const GRAVITY: f64 = 10.0;
const MASS: f64 = 1.0;
const LENGTH: f64 = 1.0;
const DT: f64 = 0.02;
pub const MAX_TORQUE: f64 = 2.0;
pub const MAX_SPEED: f64 = 8.0;

#[derive(Debug, Clone)]
pub struct Pendulum {
    spec: EnvSpec,
}

impl Default for Pendulum {
    fn default() -> Self {
        Pendulum::new()
    }
}

impl Pendulum {
    pub fn new() -> Self {
        Pendulum {
            spec: EnvSpec {
                id: EnvId::PendulumAnalog,
                state_dim: 3,
                action_space: ActionSpace::Box {
                    low: vec![-MAX_TORQUE],
                    high: vec![MAX_TORQUE],
                },
                horizon: 100,
                gamma: 0.99,
            },
        }
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn reset(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let theta: f64 = rng.gen_range(-1.0..1.0);
        let omega: f64 = rng.gen_range(-0.5..0.5);
        vec![theta.cos(), theta.sin(), omega]
    }

    /// Reward of applying torque `u` in `state`, before integrating.
    pub fn reward(&self, state: &[f64], u: f64) -> f64 {
        let theta = state[1].atan2(state[0]);
        -(theta * theta + 0.1 * state[2] * state[2] + 0.001 * u * u)
    }

    pub fn step(&self, state: &[f64], action: &[f64]) -> Step {
        let u = action[0].clamp(-MAX_TORQUE, MAX_TORQUE);
        let theta = state[1].atan2(state[0]);
        let omega = state[2];
        let reward = self.reward(state, u);

        let omega_dot = 3.0 * GRAVITY / (2.0 * LENGTH) * theta.sin()
            + 3.0 / (MASS * LENGTH * LENGTH) * u;
        let omega_next = (omega + DT * omega_dot).clamp(-MAX_SPEED, MAX_SPEED);
        let theta_next = wrap_angle(theta + DT * omega_next);

        Step {
            next_state: vec![theta_next.cos(), theta_next.sin(), omega_next],
            reward,
            terminated: false,
        }
    }

    pub fn state_bounds(&self) -> Vec<(f64, f64)> {
        vec![(-1.0, 1.0), (-1.0, 1.0), (-MAX_SPEED, MAX_SPEED)]
    }

    pub fn render(&self, state: &[f64], map: &RenderMap) -> Frame {
        let mut canvas = map.canvas();
        let (w, h) = (map.width as f64, map.height as f64);
        let theta = state[1].atan2(state[0]);
        let (cx, cy) = ((w - 1.0) / 2.0, (h - 1.0) / 2.0);
        let rod = 0.36 * h.min(w);
        let (tip_x, tip_y) = (cx + rod * theta.sin(), cy - rod * theta.cos());
        canvas.draw_line(cx, cy, tip_x, tip_y, 1.0, map.palette.agent);
        canvas.draw_disk(tip_x, tip_y, 0.06 * h.min(w), map.palette.agent);
        canvas.draw_disk(cx, cy, 1.2, map.palette.accent);

        let mut clamped = false;
        if matches!(map.mode, RenderMode::Injective) {
            clamped = draw_gauges(&mut canvas, map, &[(state[2], -MAX_SPEED, MAX_SPEED)]);
        }
        // axis-degenerate: the angular velocity is invisible
        if clamped {
            map.saturation_marker(&mut canvas);
        }
        if matches!(map.mode, RenderMode::Occluding) {
            map.apply_occluder(&mut canvas);
        }
        canvas.frame
    }
}

pub fn wrap_angle(theta: f64) -> f64 {
    let mut t = (theta + std::f64::consts::PI) % std::f64::consts::TAU;
    if t < 0.0 {
        t += std::f64::consts::TAU;
    }
    t - std::f64::consts::PI
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reward_is_zero_only_at_upright_rest() {
        let env = Pendulum::new();
        assert_eq!(env.reward(&[1.0, 0.0, 0.0], 0.0), 0.0);
        assert!(env.reward(&[0.5f64.cos(), 0.5f64.sin(), 0.0], 0.0) < 0.0);
        assert!(env.reward(&[1.0, 0.0, 1.0], 0.0) < 0.0);
        assert!(env.reward(&[1.0, 0.0, 0.0], 1.0) < 0.0);
    }

    #[test]
    fn gravity_pulls_away_from_upright() {
        let env = Pendulum::new();
        let s = vec![0.3f64.cos(), 0.3f64.sin(), 0.0];
        let step = env.step(&s, &[0.0]);
        let theta_next = step.next_state[1].atan2(step.next_state[0]);
        assert!(theta_next > 0.3, "untorqued pendulum falls further");
    }

    #[test]
    fn wrap_angle_stays_in_pi_range() {
        for t in [-10.0, -3.2, 0.0, 3.2, 10.0, 100.0] {
            let w = wrap_angle(t);
            assert!((-std::f64::consts::PI..=std::f64::consts::PI).contains(&w));
        }
    }
}
