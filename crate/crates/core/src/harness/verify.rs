//! The verify-injectivity surface: render every state of the declared
//! quantization grid, check pairwise distinctness, and — for tabular MDPs —
//! compare the Bayes-optimal state and image discriminators exactly.

use serde::Serialize;

use crate::envs::{Env, RenderMap};
use crate::oracle::{
    equivalence_check, injectivity_check, lattice_expert_policy, uniform_policy,
};

use super::HarnessError;

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub env: String,
    pub mode: String,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub states_checked: usize,
    pub injective: bool,
    /// Worst |D_image - D_state| over reachable transitions; only defined
    /// for tabular MDPs where the occupancies are exactly computable.
    pub max_abs_diff: Option<f64>,
    pub collisions: Vec<(usize, usize)>,
}

impl VerifyReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "env {} mode {} frame {}x{}x{}\n",
            self.env, self.mode, self.width, self.height, self.channels
        ));
        out.push_str(&format!(
            "states checked: {}\ninjective: {}\n",
            self.states_checked, self.injective
        ));
        match self.max_abs_diff {
            Some(d) => out.push_str(&format!(
                "max |D_image - D_state| over reachable transitions: {d:.3e}\n"
            )),
            None => out.push_str("discriminator equivalence: n/a (not a tabular MDP)\n"),
        }
        if self.collisions.is_empty() {
            out.push_str("collisions: none\n");
        } else {
            out.push_str(&format!("collisions: {}\n", self.collisions.len()));
            for (a, b) in self.collisions.iter().take(10) {
                out.push_str(&format!("  states {a} and {b} render identically\n"));
            }
            if self.collisions.len() > 10 {
                out.push_str(&format!("  ... and {} more\n", self.collisions.len() - 10));
            }
        }
        out
    }
}

fn mode_str(map: &RenderMap) -> &'static str {
    match map.mode {
        crate::envs::RenderMode::Injective => "injective",
        crate::envs::RenderMode::Occluding => "occluding",
        crate::envs::RenderMode::AxisDegenerate => "axis_degenerate",
    }
}

pub fn verify_injectivity(
    env_name: &str,
    map: &RenderMap,
    grid_per_dim: usize,
) -> Result<VerifyReport, HarnessError> {
    let env = Env::by_name(env_name)?;
    let states = env.quantized_state_grid(grid_per_dim);
    let frames: Vec<_> = states.iter().map(|s| env.render(s, map)).collect();
    let inj = injectivity_check(&frames);

    let max_abs_diff = if let Env::Grid(grid_env) = &env {
        let mdp = &grid_env.mdp;
        let agent = uniform_policy(mdp.n_states, mdp.n_actions);
        let expert = if mdp.n_actions == 4 {
            let (cols, rows) = mdp.layout();
            lattice_expert_policy(cols, rows, 0.7)
        } else {
            uniform_policy(mdp.n_states, mdp.n_actions)
        };
        Some(equivalence_check(mdp, &agent, &expert, map)?.max_abs_diff)
    } else {
        None
    };

    Ok(VerifyReport {
        env: env_name.to_string(),
        mode: mode_str(map).to_string(),
        width: map.width,
        height: map.height,
        channels: map.channels,
        states_checked: states.len(),
        injective: inj.injective,
        max_abs_diff,
        collisions: inj.collisions,
    })
}
