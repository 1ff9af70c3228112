//! Encrypted training: network description, weight initialization, the
//! per-sample forward/backward pipeline, the model update and a plaintext
//! trainer that mirrors the pipeline operation by operation.

pub mod geometry;
pub mod init;
pub mod pipeline;
pub mod plain;
pub mod pool;
pub mod spec;

use thiserror::Error;

use crate::mhe::error::MheError;
use crate::packing::PackError;

pub use geometry::Geometry;
pub use init::init_weights;
pub use pipeline::{EncryptedModel, Engine, GradientSet};
pub use plain::PlainTrainer;
pub use spec::{Network, NetworkSpec};

#[derive(Debug, Error)]
pub enum NnError {
    #[error(transparent)]
    Mhe(#[from] MheError),
    #[error(transparent)]
    Pack(#[from] PackError),
    #[error(transparent)]
    Spec(#[from] spec::SpecError),
    #[error("a step needing {need} levels above the refresh floor {floor} does not fit a chain of {max} levels")]
    ChainTooShort { need: usize, floor: usize, max: usize },
    #[error("shape: {0}")]
    Shape(String),
}

pub type Result<T> = std::result::Result<T, NnError>;

/// One training example: features and (one-hot) targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}
