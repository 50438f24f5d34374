//! Minimal dense-network kernel: tensors, layers with handwritten backward
//! passes, Adam, a seeded generator and the binary weight container.

mod adam;
mod dense;
pub mod kernels;
mod rng;
mod tensor;
mod weights;

pub use adam::{AdamState, BETA1, BETA2, EPSILON};
pub use dense::{
    flatten_grads, sigmoid, softmax, Activation, DenseCache, DenseGrads, DenseLayer, Mlp, MlpCache,
    LEAKY_SLOPE,
};
pub use rng::SeededRng;
pub use tensor::Tensor;
pub use weights::{WeightFile, MAGIC, VERSION};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("backward called without a matching forward cache")]
    MissingCache,
    #[error("weight file has bad magic field {found:?}, expected \"LCF1\"")]
    BadMagic { found: String },
    #[error("weight file version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("weight file truncated while reading {0}")]
    Truncated(&'static str),
    #[error("weight file contains a tensor name that is not UTF-8")]
    InvalidName,
    #[error("weight file has {0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("weight file is missing tensor {0:?}")]
    MissingTensor(String),
}
