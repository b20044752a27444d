//! Facial expression transfer with a geometry-contrastive GAN, end to end on
//! a bundled synthetic face dataset.
//!
//! The pipeline has two training stages and an evaluation suite:
//!
//! 1. A landmark embedding network maps 68-point face geometry onto a
//!    32-dim expression manifold, shaped by a contrastive loss plus a
//!    landmark reconstruction loss.
//! 2. A conditional generator re-renders an input face with the expression
//!    encoded from target landmarks, trained with an L1 reconstruction loss
//!    and a WGAN-GP critic while the embedding stays frozen.
//!
//! Everything is deterministic under explicit seeds, checkpointed in the
//! GCA1 tensor-archive format, and driven by the `gcgan` CLI.

pub mod config;
pub mod data;
pub mod embedding;
pub mod eval;
pub mod gan;
pub mod nn;
pub mod rng;

// pub use config::ExperimentConfig; // enabled once config lands

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error(transparent)]
    Nn(#[from] nn::NnError),
    #[error("data error: {0}")]
    Data(#[from] data::DataError),
    #[error("training aborted: {0}")]
    Train(String),
    #[error("evaluation error: {0}")]
    Eval(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
