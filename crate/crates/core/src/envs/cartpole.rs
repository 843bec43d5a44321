//! Cart-pole balancing with closed-form dynamics, Euler integrated at
//! dt = 0.02. Two discrete actions push the cart left or right; the episode
//! terminates when the cart leaves the track or the pole tips past 12 deg.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::frame::Frame;
use super::render::{draw_gauges, RenderMap, RenderMode};
use super::{ActionSpace, EnvId, EnvSpec, Step};

const GRAVITY: f64 = 9.8;
const MASS_CART: f64 = 1.0;
const MASS_POLE: f64 = 0.1;
const TOTAL_MASS: f64 = MASS_CART + MASS_POLE;
const POLE_HALF_LEN: f64 = 0.5;
const FORCE_MAG: f64 = 10.0;
const DT: f64 = 0.02;
pub const X_LIMIT: f64 = 2.4;
pub const THETA_LIMIT: f64 = 12.0 * std::f64::consts::PI / 180.0;

#[derive(Debug, Clone)]
pub struct Cartpole {
    spec: EnvSpec,
}

impl Default for Cartpole {
    fn default() -> Self {
        Cartpole::new()
    }
}

impl Cartpole {
    pub fn new() -> Self {
        Cartpole {
            spec: EnvSpec {
                id: EnvId::CartpoleAnalog,
                state_dim: 4,
                action_space: ActionSpace::Discrete(2),
                horizon: 200,
                gamma: 0.99,
            },
        }
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn reset(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..4).map(|_| rng.gen_range(-0.05..0.05)).collect()
    }

    pub fn step(&self, state: &[f64], action_idx: usize) -> Step {
        let (x, x_dot, theta, theta_dot) = (state[0], state[1], state[2], state[3]);
        let force = if action_idx == 1 { FORCE_MAG } else { -FORCE_MAG };
        let (sin_t, cos_t) = theta.sin_cos();
        let temp = (force + MASS_POLE * POLE_HALF_LEN * theta_dot * theta_dot * sin_t) / TOTAL_MASS;
        let theta_acc = (GRAVITY * sin_t - cos_t * temp)
            / (POLE_HALF_LEN * (4.0 / 3.0 - MASS_POLE * cos_t * cos_t / TOTAL_MASS));
        let x_acc = temp - MASS_POLE * POLE_HALF_LEN * theta_acc * cos_t / TOTAL_MASS;

        let next = vec![
            x + DT * x_dot,
            x_dot + DT * x_acc,
            theta + DT * theta_dot,
            theta_dot + DT * theta_acc,
        ];
        let terminated = next[0].abs() > X_LIMIT || next[2].abs() > THETA_LIMIT;
        Step {
            next_state: next,
            reward: 1.0,
            terminated,
        }
    }

    pub fn state_bounds(&self) -> Vec<(f64, f64)> {
        vec![
            (-X_LIMIT, X_LIMIT),
            (-4.0, 4.0),
            (-THETA_LIMIT, THETA_LIMIT),
            (-4.0, 4.0),
        ]
    }

    pub fn render(&self, state: &[f64], map: &RenderMap) -> Frame {
        let mut canvas = map.canvas();
        let (w, h) = (map.width as f64, map.height as f64);
        let bounds = self.state_bounds();

        let x = state[0].clamp(-X_LIMIT, X_LIMIT);
        let theta = state[2].clamp(-2.0 * THETA_LIMIT, 2.0 * THETA_LIMIT);
        let margin = 4.0;
        let cx = margin + (x + X_LIMIT) / (2.0 * X_LIMIT) * (w - 1.0 - 2.0 * margin);
        let track_y = 0.72 * h;

        // track
        canvas.draw_line(1.0, track_y + 3.0, w - 2.0, track_y + 3.0, 0.5, map.palette.accent);
        // cart body
        let cart_hw = w / 14.0;
        canvas.draw_line(cx - cart_hw, track_y, cx + cart_hw, track_y, h / 28.0, map.palette.agent);
        // pole
        let pole_len = 0.38 * h;
        let top_y = track_y - h / 28.0;
        let (tip_x, tip_y) = (cx + pole_len * theta.sin(), top_y - pole_len * theta.cos());
        canvas.draw_line(cx, top_y, tip_x, tip_y, 1.0, map.palette.agent);

        let mut clamped = state[0].abs() > X_LIMIT || state[2].abs() > THETA_LIMIT;
        match map.mode {
            RenderMode::Injective => {
                let coords = [
                    (state[1], bounds[1].0, bounds[1].1),
                    (state[3], bounds[3].0, bounds[3].1),
                ];
                clamped |= draw_gauges(&mut canvas, map, &coords);
            }
            RenderMode::AxisDegenerate => {
                // the pole angular velocity is invisible in this mode
                let coords = [(state[1], bounds[1].0, bounds[1].1)];
                clamped |= draw_gauges(&mut canvas, map, &coords);
            }
            RenderMode::Occluding => {}
        }
        if clamped {
            map.saturation_marker(&mut canvas);
        }
        if matches!(map.mode, RenderMode::Occluding) {
            map.apply_occluder(&mut canvas);
        }
        canvas.frame
    }
}
