//! Reverse-mode automatic differentiation over `f32` tensors, the layer
//! operations the networks need, and the Adam optimizer.

mod checkpoint;
mod gemm;
mod optim;
mod param;
mod tape;
mod tensor;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CheckpointEntry,
    CHECKPOINT_MAGIC,
};
pub use optim::{adam_step, AdamConfig};
pub use param::{AdamState, ParamId, Parameter};
pub use tape::{softmax, Activation, BatchStats, Gradients, Phase, RunningStats, Tape, Var};
pub use tensor::Tensor;
