//! File formats, configuration and experiment orchestration for the
//! visual-tactile pushing stack.

pub mod config;
pub mod dataset;
pub mod image;
pub mod pipeline;
pub mod report;
pub mod run;

use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config: {0}")]
    ConfigParse(#[from] toml::de::Error),
    #[error("override: {0}")]
    Override(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error(transparent)]
    Nn(#[from] vitac_core::nn::NnError),
    #[error(transparent)]
    World(#[from] vitac_core::world::WorldError),
    #[error(transparent)]
    Collect(#[from] vitac_core::collect::CollectError),
    #[error(transparent)]
    VtGen(#[from] vitac_core::vtgen::VtGenError),
    #[error(transparent)]
    VtCon(#[from] vitac_core::vtcon::VtConError),
    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }
}
