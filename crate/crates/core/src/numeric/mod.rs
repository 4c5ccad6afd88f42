//! Dense tensors, the reverse-mode gradient tape, and the Adam optimizer.

pub mod adam;
pub mod tape;
pub mod tensor;

pub use adam::{lr_at_step, AdamSlot, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use tape::{softmax_masked_slice, Gradients, NodeId, Tape};
pub use tensor::Tensor;

#[cfg(test)]
mod grad_check;
