//! The experiment configuration document. A single JSON object drives
//! every run; unknown fields are rejected so stale configs fail fast.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adversarial::{AdversarialConfig, Method};
use crate::envs::RenderMap;
use crate::baselines::BaselineConfig;
use crate::rollout::Modality;
use crate::trpo::TrpoConfig;

use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HarnessMethod {
    ExpertTrpo,
    Bc,
    Gail,
    Sigan,
    Vigan,
    Pixel,
    Tcn,
}

impl HarnessMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            HarnessMethod::ExpertTrpo => "expert_trpo",
            HarnessMethod::Bc => "bc",
            HarnessMethod::Gail => "gail",
            HarnessMethod::Sigan => "sigan",
            HarnessMethod::Vigan => "vigan",
            HarnessMethod::Pixel => "pixel",
            HarnessMethod::Tcn => "tcn",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "expert_trpo" => HarnessMethod::ExpertTrpo,
            "bc" => HarnessMethod::Bc,
            "gail" => HarnessMethod::Gail,
            "sigan" => HarnessMethod::Sigan,
            "vigan" => HarnessMethod::Vigan,
            "pixel" => HarnessMethod::Pixel,
            "tcn" => HarnessMethod::Tcn,
            _ => return None,
        })
    }

    pub fn needs_demos(&self) -> bool {
        !matches!(self, HarnessMethod::ExpertTrpo)
    }

    pub fn adversarial(&self) -> Option<Method> {
        match self {
            HarnessMethod::Gail => Some(Method::Gail),
            HarnessMethod::Sigan => Some(Method::Sigan),
            HarnessMethod::Vigan => Some(Method::Vigan),
            _ => None,
        }
    }

    /// Video methods compete in the report's per-row emphasis.
    pub fn is_video(&self) -> bool {
        matches!(self, HarnessMethod::Vigan | HarnessMethod::Pixel | HarnessMethod::Tcn)
    }

    pub fn accepts_modality(&self, m: Modality) -> bool {
        match self {
            HarnessMethod::ExpertTrpo => true,
            HarnessMethod::Bc | HarnessMethod::Gail => m == Modality::StateAction,
            HarnessMethod::Sigan => matches!(m, Modality::StateAction | Modality::StateOnly),
            HarnessMethod::Vigan | HarnessMethod::Pixel | HarnessMethod::Tcn => {
                m == Modality::Frames
            }
        }
    }
}

fn d_iterations() -> usize {
    300
}
fn d_batch_steps() -> usize {
    2000
}
fn d_workers() -> usize {
    2
}
fn d_eval_every() -> usize {
    5
}
fn d_eval_episodes() -> usize {
    20
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: String,
    pub method: HarnessMethod,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_iterations")]
    pub iterations: usize,
    #[serde(default = "d_batch_steps")]
    pub batch_steps: usize,
    #[serde(default = "d_workers")]
    pub workers: usize,
    #[serde(default)]
    pub demo_path: Option<PathBuf>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default = "d_eval_every")]
    pub eval_every: usize,
    #[serde(default = "d_eval_episodes")]
    pub eval_episodes: usize,
    /// Optional early stop once the periodic evaluation reaches this return.
    #[serde(default)]
    pub target_return: Option<f64>,
    #[serde(default)]
    pub render: RenderMap,
    #[serde(default)]
    pub trpo: TrpoConfig,
    #[serde(default)]
    pub adversarial: AdversarialConfig,
    #[serde(default)]
    pub baseline: BaselineConfig,
}

impl ExperimentConfig {
    pub fn new(env: &str, method: HarnessMethod) -> Self {
        ExperimentConfig {
            env: env.to_string(),
            method,
            seed: 0,
            iterations: d_iterations(),
            batch_steps: d_batch_steps(),
            workers: d_workers(),
            demo_path: None,
            out_dir: None,
            eval_every: d_eval_every(),
            eval_episodes: d_eval_episodes(),
            target_return: None,
            render: RenderMap::default(),
            trpo: TrpoConfig::default(),
            adversarial: AdversarialConfig::default(),
            baseline: BaselineConfig::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| HarnessError::Config {
                field: "document".into(),
                message: e.to_string(),
            })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| HarnessError::Io(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| HarnessError::Io(e.to_string()))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let field = |field: &str, message: String| HarnessError::Config {
            field: field.into(),
            message,
        };
        crate::envs::Env::by_name(&self.env)
            .map_err(|e| field("env", e.to_string()))?;
        if self.batch_steps < 1 {
            return Err(field("batch_steps", "must be >= 1".into()));
        }
        if self.workers < 1 {
            return Err(field("workers", "must be >= 1".into()));
        }
        if self.eval_every < 1 {
            return Err(field("eval_every", "must be >= 1".into()));
        }
        if self.eval_episodes < 1 {
            return Err(field("eval_episodes", "must be >= 1".into()));
        }
        if self.method.needs_demos() && self.demo_path.is_none() {
            return Err(field(
                "demo_path",
                format!("method {} requires demonstrations", self.method.as_str()),
            ));
        }
        self.trpo.validate().map_err(|m| field("trpo", m))?;
        self.adversarial
            .validate()
            .map_err(|m| field("adversarial", m))?;
        if !(0.0..=0.25).contains(&self.render.crop_shake_max) {
            return Err(field(
                "render.crop_shake_max",
                format!("{} outside [0, 0.25]", self.render.crop_shake_max),
            ));
        }
        if self.render.width % 8 != 0 || self.render.height % 8 != 0 {
            return Err(field(
                "render",
                format!(
                    "frame {}x{} must be divisible by 8 for the conv trunk",
                    self.render.width, self.render.height
                ),
            ));
        }
        if !matches!(self.render.channels, 1 | 3) {
            return Err(field("render.channels", "must be 1 or 3".into()));
        }
        Ok(())
    }
}
