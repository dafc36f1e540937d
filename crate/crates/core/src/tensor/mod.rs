//! Dense `f32` tensors, tape-based reverse-mode differentiation, AdamW and
//! the checkpoint file format.

pub mod checkpoint;
pub mod gemm;
mod optim;
mod tape;
#[allow(clippy::module_inception)]
mod tensor;

pub use optim::{AdamWConfig, AdamWState};
pub use tape::{softmax_in_place, Tape, Var};
pub(crate) use tape::{gelu_scalar, layer_norm_row};
pub use tensor::{numel, ParamStore, Tensor};
