//! Velocity-controlled point mass on the unit square. Reward peaks at the
//! origin and decays with squared distance, so returns stay positive.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::frame::Frame;
use super::render::{RenderMap, RenderMode};
use super::{ActionSpace, EnvId, EnvSpec, Step};

const STEP_SIZE: f64 = 0.15;
pub const POINT_RADIUS_FRAC: f64 = 0.08;

#[derive(Debug, Clone)]
pub struct PointMass {
    spec: EnvSpec,
}

impl Default for PointMass {
    fn default() -> Self {
        PointMass::new()
    }
}

impl PointMass {
    pub fn new() -> Self {
        PointMass {
            spec: EnvSpec {
                id: EnvId::PointMass,
                state_dim: 2,
                action_space: ActionSpace::Box {
                    low: vec![-1.0, -1.0],
                    high: vec![1.0, 1.0],
                },
                horizon: 50,
                gamma: 0.99,
            },
        }
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn reset(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        vec![rng.gen_range(-0.9..0.9), rng.gen_range(-0.9..0.9)]
    }

    pub fn step(&self, state: &[f64], action: &[f64]) -> Step {
        let ax = action[0].clamp(-1.0, 1.0);
        let ay = action[1].clamp(-1.0, 1.0);
        let next = vec![
            (state[0] + STEP_SIZE * ax).clamp(-1.0, 1.0),
            (state[1] + STEP_SIZE * ay).clamp(-1.0, 1.0),
        ];
        let reward = (-2.0 * (state[0] * state[0] + state[1] * state[1])).exp();
        Step {
            next_state: next,
            reward,
            terminated: false,
        }
    }

    pub fn state_bounds(&self) -> Vec<(f64, f64)> {
        vec![(-1.0, 1.0), (-1.0, 1.0)]
    }

    pub fn render(&self, state: &[f64], map: &RenderMap) -> Frame {
        let mut canvas = map.canvas();
        let (w, h) = (map.width as f64, map.height as f64);
        let radius = POINT_RADIUS_FRAC * w.min(h);
        let x = state[0].clamp(-1.0, 1.0);
        let y = if matches!(map.mode, RenderMode::AxisDegenerate) {
            0.0 // the y coordinate is invisible in this mode
        } else {
            state[1].clamp(-1.0, 1.0)
        };
        let px = (x + 1.0) / 2.0 * (w - 1.0);
        let py = (1.0 - (y + 1.0) / 2.0) * (h - 1.0);
        canvas.draw_disk(px, py, radius, map.palette.agent);

        if state[0].abs() > 1.0 || state[1].abs() > 1.0 {
            map.saturation_marker(&mut canvas);
        }
        if matches!(map.mode, RenderMode::Occluding) {
            map.apply_occluder(&mut canvas);
        }
        canvas.frame
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reward_peaks_at_origin() {
        let env = PointMass::new();
        assert_eq!(env.step(&[0.0, 0.0], &[0.0, 0.0]).reward, 1.0);
        assert!(env.step(&[0.5, 0.0], &[0.0, 0.0]).reward < 1.0);
    }

    #[test]
    fn origin_renders_a_centered_disk_and_nothing_else() {
        let env = PointMass::new();
        let map = RenderMap::sized(64, 64, 3);
        let f = env.render(&[0.0, 0.0], &map);
        let r = POINT_RADIUS_FRAC * 64.0;
        let (cx, cy) = (31.5, 31.5);
        for y in 0..64 {
            for x in 0..64 {
                let dist =
                    ((x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2)).sqrt();
                let lit = (0..3).any(|c| f.get(x, y, c) != 0);
                if dist < r - 0.5 {
                    assert!(lit, "interior pixel ({x},{y}) dark");
                } else if dist >= r + 0.5 {
                    assert!(!lit, "exterior pixel ({x},{y}) lit");
                }
            }
        }
    }

    #[test]
    fn occluded_states_collide() {
        let env = PointMass::new();
        let map = RenderMap::sized(64, 64, 3).with_mode(RenderMode::Occluding);
        // both disks fall fully inside the default occluder (x >= 0.55 W)
        let f1 = env.render(&[0.6, 0.3], &map);
        let f2 = env.render(&[0.8, -0.4], &map);
        assert_eq!(f1.pixels, f2.pixels);
        // whereas a visible state differs
        let f3 = env.render(&[-0.5, 0.0], &map);
        assert_ne!(f1.pixels, f3.pixels);
    }
}
