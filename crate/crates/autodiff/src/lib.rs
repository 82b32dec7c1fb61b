//! Reverse-mode differentiation over dense `f64` tensors.
//!
//! Operations are recorded on a [`Tape`] as they run. [`Tape::backward`]
//! walks the recording in reverse and returns a [`Gradients`] table, which
//! can be folded into a [`ParamStore`] and consumed by [`Adam`].
//!
//! The op set is what a small convolutional encoder, a transformer decoder,
//! a GRU and their losses need: matrix products, broadcasting bias, column
//! concatenation and slicing, row gathers, pointwise nonlinearities, row
//! softmax, layer and batch normalization, 2-D convolution, 2x2 max pooling,
//! causal multi-head attention, binary cross-entropy on logits and squared
//! error.
//!
//! ```
//! use roadforge_autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::scalar(3.0));
//! let y = tape.mul(x, x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(tape.value(y).item(), 9.0);
//! assert_eq!(grads.get(x).unwrap().item(), 6.0);
//! ```

mod adam;
mod checkpoint;
mod gemm;
mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use gradcheck::{grad_check, CoordCheck, GradCheckConfig, GradCheckReport};
pub use params::{Param, ParamId, ParamStore};
pub use tape::{BatchNormStats, Gradients, Tape, Var, NORM_EPS};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum AdError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch { op: &'static str, left: Vec<usize>, right: Vec<usize> },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalarLoss(Vec<usize>),
    #[error("duplicate parameter name `{0}`")]
    DuplicateName(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn mismatch(op: &'static str, left: &[usize], right: &[usize]) -> AdError {
    AdError::ShapeMismatch { op, left: left.to_vec(), right: right.to_vec() }
}
