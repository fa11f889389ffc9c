//! Visual-tactile pushing core.
//!
//! Everything here is `no_std` plus `alloc`: the autodiff substrate, the
//! tactile depth renderer, the planar pushing world, the tactile generator
//! and the contrastive SAC agent. File formats, configuration and the CLI
//! live in the `vitac` crate.

#![no_std]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod nn;
pub mod rng;
pub mod collect;
pub mod data;
pub mod eval;
pub mod expert;
pub mod metrics;
pub mod tactile;
pub mod vtcon;
pub mod vtgen;
pub mod world;
