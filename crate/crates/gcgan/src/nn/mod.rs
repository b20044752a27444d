//! Differentiable-computation runtime: tensors, autodiff graph, layers,
//! Adam, parameter archives and gradient checking.

pub mod adam;
pub mod archive;
pub mod conv;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod tensor;

pub use adam::AdamState;
pub use archive::TensorArchive;
pub use graph::{Graph, Var};
pub use layers::{Binding, Bound, Mode, ParamSet};
pub use tensor::{Scalar, Tensor};

use thiserror::Error;

#[derive(Error, Debug)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("archive error: {0}")]
    Archive(String),
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
