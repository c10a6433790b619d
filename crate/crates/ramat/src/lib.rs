//! Reservoir-augmented masked autoencoding transformer for multivariate
//! KPI time series: a fixed echo-state reservoir feeds patch embeddings
//! into a transformer encoder trained with a masked-reconstruction
//! objective, then fine-tuned with a shallow task head.
//!
//! The crate is organized as:
//! - [`numerics`]: f32 tensor core with reverse-mode autodiff on a tape
//! - [`pipeline`]: KPI alignment, filtering, windowing, standardization
//! - [`reservoir`]: the fixed echo-state network
//! - [`model`]: patchify/mask/embed/encode/decode and the task heads
//! - [`train`]: pretraining and fine-tuning loops
//! - [`checkpoint`]: binary container for weights, scalers, and RNG state
//! - [`cli`]: the operator-facing commands

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod reservoir;
pub mod rng;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
