//! Inception convolution layer and the residual inception block.

use rand_chacha::ChaCha8Rng;

use crate::autograd::{ops, Tape, Var};
use crate::tensor::DType;

use super::{
    BatchNormLayer, Conv2d, DscLayer, HybridPoolLayer, LayerError, Mode, Param, ParamVisit,
    PoolMode,
};

/// Four parallel branches — depthwise-separable convolutions at 1×1, 3×3 and
/// 5×5 plus a same-mode hybrid pool — each batch-normalized and ReLU
/// activated, concatenated, then fused by a biased 1×1 convolution.
///
/// Branch convolutions carry no bias (batch norm's shift makes it
/// redundant). Branch order in the concatenation is fixed: [1×1, 3×3, 5×5,
/// pool], which keeps weight archives reproducible.
#[derive(Clone, Debug)]
pub struct InceptionConvLayer {
    pub b1: DscLayer,
    pub b3: DscLayer,
    pub b5: DscLayer,
    pub pool: HybridPoolLayer,
    pub bn1: BatchNormLayer,
    pub bn3: BatchNormLayer,
    pub bn5: BatchNormLayer,
    pub bnp: BatchNormLayer,
    pub merge: Conv2d,
}

impl InceptionConvLayer {
    pub fn new(d: usize, r: usize, rng: &mut ChaCha8Rng, dtype: DType) -> Self {
        InceptionConvLayer {
            b1: DscLayer::new(d, r, 1, false, rng, dtype),
            b3: DscLayer::new(d, r, 3, false, rng, dtype),
            b5: DscLayer::new(d, r, 5, false, rng, dtype),
            pool: HybridPoolLayer::new(d, PoolMode::Same, false, rng, dtype),
            bn1: BatchNormLayer::new(r, dtype),
            bn3: BatchNormLayer::new(r, dtype),
            bn5: BatchNormLayer::new(r, dtype),
            bnp: BatchNormLayer::new(d, dtype),
            merge: Conv2d::new(3 * r + d, r, 1, true, rng, dtype),
        }
    }

    pub fn forward(&self, tape: &Tape, x: Var, mode: Mode) -> Result<Var, LayerError> {
        let branch = |conv_out: Var, bn: &BatchNormLayer| -> Result<Var, LayerError> {
            Ok(ops::relu(tape, bn.forward(tape, conv_out, mode)?))
        };
        let y1 = branch(self.b1.forward(tape, x)?, &self.bn1)?;
        let y3 = branch(self.b3.forward(tape, x)?, &self.bn3)?;
        let y5 = branch(self.b5.forward(tape, x)?, &self.bn5)?;
        let yp = branch(self.pool.forward(tape, x)?, &self.bnp)?;
        let cat = ops::concat_channels(tape, &[y1, y3, y5, yp])?;
        self.merge.forward(tape, cat)
    }

    pub fn out_channels(&self) -> usize {
        self.merge.out_channels()
    }
}

impl ParamVisit for InceptionConvLayer {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Param)) {
        f(format!("{prefix}.dw1"), &self.b1.depthwise);
        f(format!("{prefix}.pw1"), &self.b1.pointwise);
        f(format!("{prefix}.dw3"), &self.b3.depthwise);
        f(format!("{prefix}.pw3"), &self.b3.pointwise);
        f(format!("{prefix}.dw5"), &self.b5.depthwise);
        f(format!("{prefix}.pw5"), &self.b5.pointwise);
        self.pool.visit_params(&format!("{prefix}.pool"), f);
        self.bn1.visit_params(&format!("{prefix}.bn1"), f);
        self.bn3.visit_params(&format!("{prefix}.bn3"), f);
        self.bn5.visit_params(&format!("{prefix}.bn5"), f);
        self.bnp.visit_params(&format!("{prefix}.bnp"), f);
        self.merge.visit_params(&format!("{prefix}.merge"), f);
    }
}

/// Two inception layers in sequence with an additive shortcut through a
/// biased 1×1 depthwise-separable projection of the block input.
#[derive(Clone, Debug)]
pub struct ResidualInceptionBlock {
    pub inc1: InceptionConvLayer,
    pub inc2: InceptionConvLayer,
    pub shortcut: DscLayer,
}

impl ResidualInceptionBlock {
    pub fn new(d: usize, r: usize, rng: &mut ChaCha8Rng, dtype: DType) -> Self {
        ResidualInceptionBlock {
            inc1: InceptionConvLayer::new(d, r, rng, dtype),
            inc2: InceptionConvLayer::new(r, r, rng, dtype),
            shortcut: DscLayer::new(d, r, 1, true, rng, dtype),
        }
    }

    pub fn forward(&self, tape: &Tape, x: Var, mode: Mode) -> Result<Var, LayerError> {
        let main = self.inc2.forward(tape, self.inc1.forward(tape, x, mode)?, mode)?;
        let short = self.shortcut.forward(tape, x)?;
        Ok(ops::add(tape, main, short)?)
    }

    pub fn out_channels(&self) -> usize {
        self.inc2.out_channels()
    }
}

impl ParamVisit for ResidualInceptionBlock {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Param)) {
        self.inc1.visit_params(&format!("{prefix}.inc1"), f);
        self.inc2.visit_params(&format!("{prefix}.inc2"), f);
        self.shortcut.visit_params(&format!("{prefix}.short"), f);
    }
}
