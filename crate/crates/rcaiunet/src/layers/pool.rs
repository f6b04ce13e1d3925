//! Max pooling and the hybrid max+spectral pooling layer.
//!
//! Hybrid pooling concatenates a max-pooled branch with a spectrally pooled
//! branch (DFT → centered truncation → inverse DFT) and fuses them back to
//! the input channel count with a 1×1 convolution. Valid mode halves the
//! spatial dims; same mode preserves them.

use rand_chacha::ChaCha8Rng;

use crate::autograd::{ops, Tape, Var};
use crate::tensor::{DType, Tensor};

use super::{Conv2d, LayerError, Param, ParamVisit};

/// Max-pool ties route the gradient to the first maximal element in window
/// scan order, which keeps backward deterministic.
fn max_pool_generic(
    tape: &Tape,
    x: Var,
    k: usize,
    stride: usize,
    pad: usize,
) -> Result<Var, LayerError> {
    let vx = tape.value(x);
    let (n, c, h, w) = vx.dims4()?;
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0f64; n * c * oh * ow];
    let mut argmax = vec![0usize; n * c * oh * ow];
    let xd = vx.data();
    for b in 0..n {
        for ch in 0..c {
            let in_base = (b * c + ch) * h * w;
            let out_base = (b * c + ch) * oh * ow;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for ky in 0..k {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let idx = in_base + iy as usize * w + ix as usize;
                            if xd[idx] > best {
                                best = xd[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out[out_base + oy * ow + ox] = best;
                    argmax[out_base + oy * ow + ox] = best_idx;
                }
            }
        }
    }
    let out = Tensor::from_vec(&[n, c, oh, ow], out, vx.dtype())?;
    let in_shape = vx.shape().to_vec();
    let in_len = vx.len();
    Ok(tape.push(
        out,
        vec![x],
        Some(Box::new(move |g| {
            let mut gx = vec![0.0f64; in_len];
            for (i, &src) in argmax.iter().enumerate() {
                gx[src] += g.data()[i];
            }
            vec![Tensor::from_vec(&in_shape, gx, g.dtype()).expect("maxpool grad")]
        })),
        false,
    ))
}

/// 2×2 stride-2 max pooling (halves H and W; dims must be even).
pub fn max_pool2x2_op(tape: &Tape, x: Var) -> Result<Var, LayerError> {
    let (_, _, h, w) = tape.value(x).dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(LayerError::OddSpatialDims { h, w });
    }
    max_pool_generic(tape, x, 2, 2, 0)
}

/// 3×3 stride-1 same-padded max pooling (preserves dims).
pub fn max_pool3x3_same_op(tape: &Tape, x: Var) -> Result<Var, LayerError> {
    max_pool_generic(tape, x, 3, 1, 1)
}

/// Downsampling flavor of a hybrid pooling layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolMode {
    /// Halves H and W; connects encoder stages.
    Valid,
    /// Preserves H and W; used inside inception blocks.
    Same,
}

/// Merges max-pooled and spectrally pooled branches with a 1×1 convolution
/// back to the input channel count.
#[derive(Clone, Debug)]
pub struct HybridPoolLayer {
    pub mode: PoolMode,
    pub merge: Conv2d,
}

impl HybridPoolLayer {
    /// `bias` should be off when the pool feeds straight into a batch norm
    /// (the shift is redundant there and its gradient identically zero).
    pub fn new(
        channels: usize,
        mode: PoolMode,
        bias: bool,
        rng: &mut ChaCha8Rng,
        dtype: DType,
    ) -> Self {
        HybridPoolLayer {
            mode,
            merge: Conv2d::new(2 * channels, channels, 1, bias, rng, dtype),
        }
    }

    pub fn forward(&self, tape: &Tape, x: Var) -> Result<Var, LayerError> {
        let (_, _, h, w) = tape.value(x).dims4()?;
        let (max_branch, spectral_branch) = match self.mode {
            PoolMode::Valid => {
                if h % 2 != 0 || w % 2 != 0 {
                    return Err(LayerError::OddSpatialDims { h, w });
                }
                let m = max_pool2x2_op(tape, x)?;
                let s = ops::spectral_downsample(tape, x, h / 2, w / 2);
                (m, s)
            }
            PoolMode::Same => {
                let m = max_pool3x3_same_op(tape, x)?;
                let s = ops::spectral_lowpass(tape, x);
                (m, s)
            }
        };
        let cat = ops::concat_channels(tape, &[max_branch, spectral_branch])?;
        self.merge.forward(tape, cat)
    }
}

impl ParamVisit for HybridPoolLayer {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Param)) {
        self.merge.visit_params(&format!("{prefix}.merge"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    /// Merge conv that averages the two branches, so constants survive.
    fn constant_preserving(layer: &HybridPoolLayer, channels: usize) {
        let mut wdata = vec![0.0; channels * 2 * channels];
        for c in 0..channels {
            wdata[c * 2 * channels + c] = 0.5; // max branch
            wdata[c * 2 * channels + channels + c] = 0.5; // spectral branch
        }
        layer
            .merge
            .w
            .set(Tensor::from_vec(&[channels, 2 * channels, 1, 1], wdata, DType::F64).unwrap());
    }

    #[test]
    fn valid_mode_preserves_constants_at_half_resolution() {
        let mut r = rng();
        let layer = HybridPoolLayer::new(2, PoolMode::Valid, true, &mut r, DType::F64);
        constant_preserving(&layer, 2);
        let tape = Tape::new();
        let x = tape.constant(Tensor::full(&[1, 2, 8, 8], 0.7, DType::F64));
        let y = tape.value(layer.forward(&tape, x).unwrap());
        assert_eq!(y.shape(), &[1, 2, 4, 4]);
        for &v in y.data() {
            assert!((v - 0.7).abs() < 1e-9, "{v}");
        }
    }

    #[test]
    fn same_mode_preserves_dims_and_constants() {
        let mut r = rng();
        let layer = HybridPoolLayer::new(1, PoolMode::Same, true, &mut r, DType::F64);
        constant_preserving(&layer, 1);
        let tape = Tape::new();
        let x = tape.constant(Tensor::full(&[2, 1, 6, 6], -0.3, DType::F64));
        let y = tape.value(layer.forward(&tape, x).unwrap());
        assert_eq!(y.shape(), &[2, 1, 6, 6]);
        for &v in y.data() {
            assert!((v + 0.3).abs() < 1e-9);
        }
    }

    #[test]
    fn max_branch_alone_reduces_window_maximum() {
        let mut r = rng();
        let layer = HybridPoolLayer::new(1, PoolMode::Valid, true, &mut r, DType::F64);
        // Weight 1 on the max branch, 0 on the spectral branch.
        layer
            .merge
            .w
            .set(Tensor::from_vec(&[1, 2, 1, 1], vec![1.0, 0.0], DType::F64).unwrap());
        let tape = Tape::new();
        let x = tape.constant(
            Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0], DType::F64).unwrap(),
        );
        let y = tape.value(layer.forward(&tape, x).unwrap());
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[4.0]);
    }

    #[test]
    fn valid_mode_rejects_odd_dims() {
        let mut r = rng();
        let layer = HybridPoolLayer::new(1, PoolMode::Valid, true, &mut r, DType::F64);
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 1, 5, 6], DType::F64));
        assert!(matches!(
            layer.forward(&tape, x),
            Err(LayerError::OddSpatialDims { h: 5, w: 6 })
        ));
    }
}
