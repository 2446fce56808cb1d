//! Multimodal gated-fusion modeling toolkit.
//!
//! Builds prediction models over three clinical-record modalities
//! (time-invariant features, hourly time series, note token sequences):
//! per-modality encoders, an attention-gating fusion with main-modality
//! switching, alternative fusion strategies (early, tensor, cross-attention),
//! prediction heads, ranking metrics, and a deterministic training loop.
//! Everything runs on a small reverse-mode autodiff engine over dense
//! 64-bit tensors.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`]: dense tensors, the computation graph, backward, grad checks
//! - [`layers`]: linear / layer-norm / multi-head attention building blocks
//! - [`encoders`]: the three modality encoders and four time-series variants
//! - [`fusion`]: attention gating plus early / tensor / cross-attention fusion
//! - [`heads`]: prediction heads and the cross-entropy objective
//! - [`metrics`]: AUROC, AUPR, top-k recall
//! - [`data`]: synthetic dataset generation, file format, splits, batching
//! - [`model`]: the named-model registry and full forward passes
//! - [`optim`], [`train`], [`checkpoint`]: Adam, the training loop, snapshots

pub mod checkpoint;
pub mod data;
pub mod encoders;
pub mod error;
pub mod fusion;
pub mod gradcheck_suite;
pub mod heads;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Gradients, Graph, Tensor};
