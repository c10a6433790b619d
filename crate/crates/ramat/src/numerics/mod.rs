//! Minimal dense-tensor compute core with reverse-mode gradient
//! accumulation. Provides exactly the kernels the model needs: matmul,
//! bias/elementwise ops, softmax, layer norm, structural ops, reductions,
//! and losses, all recorded on a single-shot [`Tape`].
//!
//! Storage and compute are 32-bit; test oracles re-evaluate in 64-bit.
//! No broadcasting except scalar `scale`; shape alignment is explicit.
//! Kernels use fixed-order accumulation so identical inputs produce
//! bit-identical outputs.

mod tape;
mod tensor;

pub use tape::{Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod grad_check;
