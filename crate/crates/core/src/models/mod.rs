//! Fixed network architectures: policies, value function, discriminators,
//! and the TCN embedding encoder. Parameters are checkpointed through the
//! VGNP format, one named tensor each.

pub mod disc;
pub mod nn;
pub mod policy;
pub mod value;

pub use disc::{ConvDiscriminator, MlpDiscriminator, TcnEncoder, DISC_EPS, TCN_EMBED_DIM};
pub use nn::{standard_normal, ConvTrunk, Linear, Mlp};
pub use policy::{
    gaussian_log_prob, log_sum_exp, softmax, ActionSample, BoundPolicy, CategoricalMlpPolicy,
    DistNodes, DistParams, GaussianMlpPolicy, Policy,
};
pub use value::ValueMlp;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("non-finite {0}")]
    NonFiniteInput(&'static str),
    #[error(transparent)]
    Diff(#[from] crate::diffcore::DiffError),
}
