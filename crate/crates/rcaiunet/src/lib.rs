//! RCA-IUnet: a residual cross-spatial attention guided inception U-Net for
//! binary tumor segmentation in ultrasound-style images, implemented from
//! scratch on a small CPU tensor/autograd stack.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`] — dense NCHW tensors, exact 2-D DFTs, spectral crop/pad, the
//!   RTEN serialization format;
//! - [`autograd`] — a reverse-mode tape plus a finite-difference gradient
//!   checker that serves as the oracle for every differentiable component;
//! - [`layers`] — depthwise-separable convolution, hybrid max+spectral
//!   pooling, inception and residual inception blocks, cross-spatial
//!   attention, batch normalization, transposed-convolution upsampling;
//! - [`model`] — the four-stage encoder/decoder assembly with gated skips;
//! - [`loss`] — the combined ½·BCE + ½·Dice segmentation loss;
//! - [`metrics`] — mask evaluation metrics and inference timing;
//! - [`postprocess`] — thresholding, hole filling, small-region removal;
//! - [`data`] — dataset loading, deterministic splits, and a synthetic
//!   ultrasound-like generator;
//! - [`train`] — Adam with plateau LR reduction and early stopping.

pub mod autograd;
pub mod data;
pub mod diagnostics;
pub mod layers;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod postprocess;
pub mod tensor;
pub mod train;

pub use autograd::gradcheck::{GradcheckConfig, GradcheckReport};
pub use autograd::{Gradients, ParamId, Tape, Var};
pub use data::{Sample, SplitSpec};
pub use layers::{ConvSpec, PadMode};
pub use loss::{BatchPair, LossReport};
pub use metrics::{ConfusionCounts, MaskPair, MetricReport};
pub use model::{ModelConfig, RcaIUnet};
pub use postprocess::BinaryMask;
pub use tensor::{ComplexTensor, DType, Tensor, TensorError};
pub use train::TrainConfig;
