//! Network building blocks: depthwise-separable convolution, hybrid
//! max+spectral pooling, inception convolution, residual inception blocks,
//! cross-spatial attention, batch normalization, and transposed-convolution
//! upsampling.
//!
//! Layers own their weights as [`Param`]s and are immutable during
//! forward/backward; training updates parameter values between steps.

use std::cell::{Cell, RefCell};
use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{ParamId, Tape, Var};
use crate::tensor::{DType, Tensor, TensorError};

mod attention;
mod conv;
mod inception;
mod norm;
mod pool;
mod upsample;

pub use attention::CrossSpatialAttentionBlock;
pub use conv::{
    conv2d_backward, conv2d_forward, conv2d_op, cost_model, depthwise_backward,
    depthwise_conv2d_op, depthwise_forward, Conv2d, ConvCost, ConvKind, ConvSpec, DscLayer,
    PadMode,
};
pub use inception::{InceptionConvLayer, ResidualInceptionBlock};
pub use norm::BatchNormLayer;
pub use pool::{max_pool2x2_op, max_pool3x3_same_op, HybridPoolLayer, PoolMode};
pub use upsample::UpsampleLayer;

/// Errors raised by layer forward passes.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerError {
    Shape(TensorError),
    /// Valid-mode hybrid pooling needs even spatial dims.
    OddSpatialDims { h: usize, w: usize },
}

impl fmt::Display for LayerError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerError::Shape(e) => write!(f, "{e}"),
            LayerError::OddSpatialDims { h, w } => {
                write!(f, "valid-mode pooling needs even spatial dims, got {h}x{w}")
            }
        }
    }
}

impl std::error::Error for LayerError {}

impl From<TensorError> for LayerError {
    fn from(e: TensorError) -> Self {
        LayerError::Shape(e)
    }
}

/// Train/eval switch; batch normalization is the only consumer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A trainable tensor with a stable identity.
///
/// The value sits behind a `RefCell` so the owning layer can stay shared
/// (`&self`) during forward passes while the optimizer swaps values between
/// steps. Cloning preserves the id; clones are snapshots of the same logical
/// parameter.
#[derive(Debug)]
pub struct Param {
    id: ParamId,
    value: RefCell<Tensor>,
    trainable: Cell<bool>,
}

impl Param {
    pub fn new(value: Tensor) -> Param {
        Param {
            id: ParamId::fresh(),
            value: RefCell::new(value),
            trainable: Cell::new(true),
        }
    }

    pub fn id(&self) -> ParamId {
        self.id
    }

    pub fn value(&self) -> Tensor {
        self.value.borrow().clone()
    }

    pub fn set(&self, value: Tensor) {
        assert_eq!(
            value.shape(),
            self.value.borrow().shape(),
            "parameter shape is fixed"
        );
        *self.value.borrow_mut() = value;
    }

    pub fn len(&self) -> usize {
        self.value.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn trainable(&self) -> bool {
        self.trainable.get()
    }

    pub fn set_trainable(&self, on: bool) {
        self.trainable.set(on);
    }

    /// Registers the current value on a tape as a differentiable leaf.
    pub fn on(&self, tape: &Tape) -> Var {
        tape.param(self.id, self.value())
    }
}

impl Clone for Param {
    fn clone(&self) -> Self {
        Param {
            id: self.id,
            value: RefCell::new(self.value()),
            trainable: Cell::new(self.trainable.get()),
        }
    }
}

/// Visitor over named parameters; the naming scheme is the stable weight
/// archive contract.
pub trait ParamVisit {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Param));
}

/// He-uniform initialization: U(-b, b) with b = sqrt(6 / fan_in).
pub fn he_uniform(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng, dtype: DType) -> Tensor {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, dtype, |_| rng.gen_range(-bound..bound))
}

/// Collects `(name, param)` pairs from any visitable layer.
pub fn collect_params(layer: &dyn ParamVisit, prefix: &str) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    layer.visit_params(prefix, &mut |name, p| {
        out.push((name, p.value()));
    });
    out
}
