//! Minimal differentiable-computation layer: tensors, a reverse-mode tape,
//! the layers the generator and agent are built from, Adam, a
//! finite-difference checker and the `VTAC1` checkpoint codec.

mod adam;
pub mod checkpoint;
pub(crate) mod conv;
pub mod gradcheck;
mod graph;
pub mod layers;
mod param;
mod scalar;
mod tensor;

pub use adam::{adam_step, AdamConfig};
pub use graph::{Graph, Var};
pub use param::{Gradients, Param, ParamId, ParamStore, StoreId};
pub use scalar::{gemm, DType, Layout, Scalar};
pub use tensor::{numel, strides, Tensor};

use alloc::string::String;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NnError {
    #[error("backward called twice on the same recorded graph; run a fresh forward pass first")]
    BackwardTwice,
    #[error("backward needs a single-element loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("parameter manifests differ")]
    ManifestMismatch,
    #[error("checkpoint is malformed: {0}")]
    Checkpoint(String),
    #[error("missing parameter `{0}` in checkpoint")]
    MissingParam(String),
    #[error("parameter `{name}` has shape {found:?} in checkpoint, expected {expected:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
}

/// Which copy of a store's values a forward pass reads, and whether the
/// result is differentiable with respect to them.
#[derive(Clone, Copy)]
pub struct Bound<'a, T> {
    store: &'a ParamStore<T>,
    trainable: bool,
}

impl<'a, T: Scalar> Bound<'a, T> {
    pub fn train(store: &'a ParamStore<T>) -> Self {
        Self { store, trainable: true }
    }

    pub fn frozen(store: &'a ParamStore<T>) -> Self {
        Self { store, trainable: false }
    }

    pub fn store(&self) -> &'a ParamStore<T> {
        self.store
    }

    pub fn get(&self, g: &mut Graph<T>, id: ParamId) -> Var {
        if self.trainable {
            g.param(self.store, id)
        } else {
            g.frozen(self.store, id)
        }
    }
}
