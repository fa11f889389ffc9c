//! Contrastive visual-tactile soft actor-critic.

mod agent;
mod contrastive;
mod encoder;
mod fusion;
mod replay;
mod train;

pub use agent::*;
pub use contrastive::*;
pub use encoder::*;
pub use fusion::*;
pub use replay::*;
pub use train::*;

use crate::nn::layers::HeadsError;
use crate::nn::NnError;
use crate::vtgen::VtGenError;
use crate::world::WorldError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VtConError {
    #[error("invalid agent configuration: {0}")]
    Config(&'static str),
    #[error(transparent)]
    Heads(#[from] HeadsError),
    #[error("shape error: {0}")]
    Shape(&'static str),
    #[error("contrastive loss needs at least two samples, got {0}")]
    BatchTooSmall(usize),
    #[error("replay holds {have} transitions, an update needs {need}")]
    InsufficientBuffer { have: usize, need: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    VtGen(#[from] VtGenError),
}
