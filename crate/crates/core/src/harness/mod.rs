//! The experiment runner behind the CLI: expert training, demonstration
//! recording, imitation runs for all methods, external frame ingestion,
//! evaluation, and reporting.

pub mod config;
pub mod ingest;
pub mod report;
pub mod run;
pub mod verify;

pub use config::{ExperimentConfig, HarnessMethod};
pub use ingest::ingest_frames;
pub use report::{write_report, ReportTable};
pub use run::{
    build_policy, eval_checkpoint, imitate, imitate_with, load_policy, record_demos,
    record_demos_to_file, save_checkpoint, train_expert, LockGuard, RunOutcome, Summary,
};
pub use verify::{verify_injectivity, VerifyReport};

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config field {field}: {message}")]
    Config { field: String, message: String },
    #[error("{0}")]
    Modality(String),
    #[error("output directory is locked by another run: {0}")]
    LockHeld(PathBuf),
    #[error("no summary found for run {0}")]
    MissingSummary(PathBuf),
    #[error("ingest: {0}")]
    Ingest(String),
    #[error(transparent)]
    Env(#[from] crate::envs::EnvError),
    #[error(transparent)]
    Rollout(#[from] crate::rollout::RolloutError),
    #[error(transparent)]
    Adversarial(#[from] crate::adversarial::AdvError),
    #[error(transparent)]
    Baseline(#[from] crate::baselines::BaselineError),
    #[error(transparent)]
    Trpo(#[from] crate::trpo::TrpoError),
    #[error(transparent)]
    Diff(#[from] crate::diffcore::DiffError),
    #[error(transparent)]
    Oracle(#[from] crate::oracle::OracleError),
    #[error("io: {0}")]
    Io(String),
}
