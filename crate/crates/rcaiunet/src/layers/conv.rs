//! Standard and depthwise-separable 2-D convolution: cost model, forward and
//! backward kernels, differentiable ops, and the layer types built on them.

use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::tensor::{DType, Tensor, TensorError, TensorResult};

use super::{he_uniform, LayerError, Param, ParamVisit};

/// Spatial padding policy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PadMode {
    /// Zero padding sized so stride-1 output keeps the input dims.
    Same,
    /// No padding; kernel stays inside the input.
    Valid,
}

/// Convolution hyperparameters for the cost model.
#[derive(Clone, Copy, Debug)]
pub struct ConvSpec {
    /// Square kernel size `f`.
    pub kernel: usize,
    /// Number of kernels `r` (output channels).
    pub kernels: usize,
    /// Input depth `d`.
    pub in_channels: usize,
    pub stride: usize,
    pub pad: PadMode,
    /// Output spatial size `p` implied by input size, stride and padding.
    pub out_size: usize,
}

/// Which factorization the cost model describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvKind {
    Standard,
    DepthwiseSeparable,
}

/// Multiplication and parameter counts for one convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvCost {
    pub multiplications: u64,
    pub parameters: u64,
}

/// Exact cost of a convolution under either factorization.
///
/// Standard: `r·p²·f²·d` multiplications and `r·f²·d` parameters.
/// Depthwise-separable: `d·p²·(f²+r)` and `d·(f²+r)`. The DSC/SC ratio is
/// `1/r + 1/f²` for both counts, exactly, in rational arithmetic.
pub fn cost_model(spec: &ConvSpec, kind: ConvKind) -> ConvCost {
    let r = spec.kernels as u64;
    let f = spec.kernel as u64;
    let d = spec.in_channels as u64;
    let p2 = (spec.out_size * spec.out_size) as u64;
    match kind {
        ConvKind::Standard => ConvCost {
            multiplications: r * p2 * f * f * d,
            parameters: r * f * f * d,
        },
        ConvKind::DepthwiseSeparable => ConvCost {
            multiplications: d * p2 * (f * f + r),
            parameters: d * (f * f + r),
        },
    }
}

/// Top/left zero padding for the given geometry.
fn pad_offsets(h: usize, w: usize, k: usize, stride: usize, pad: PadMode) -> (usize, usize) {
    match pad {
        PadMode::Valid => (0, 0),
        PadMode::Same => {
            let out_h = h.div_ceil(stride);
            let out_w = w.div_ceil(stride);
            let total_h = ((out_h - 1) * stride + k).saturating_sub(h);
            let total_w = ((out_w - 1) * stride + k).saturating_sub(w);
            (total_h / 2, total_w / 2)
        }
    }
}

fn out_dims(h: usize, w: usize, k: usize, stride: usize, pad: PadMode) -> (usize, usize) {
    match pad {
        PadMode::Valid => ((h - k) / stride + 1, (w - k) / stride + 1),
        PadMode::Same => (h.div_ceil(stride), w.div_ceil(stride)),
    }
}

/// Valid output-x range for a kernel column, so the inner loop stays in
/// bounds without per-pixel branches.
fn ox_range(k_off: usize, pad: usize, stride: usize, in_n: usize, out_n: usize) -> (usize, usize) {
    // need 0 <= ox*stride + k_off - pad < in_n
    let lo = if k_off >= pad {
        0
    } else {
        (pad - k_off).div_ceil(stride)
    };
    let hi_excl = if in_n + pad > k_off {
        (((in_n + pad - k_off - 1) / stride) + 1).min(out_n)
    } else {
        0
    };
    (lo.min(hi_excl), hi_excl)
}

/// Plain convolution forward. `x`: N×C×H×W, `w`: O×C×k×k.
pub fn conv2d_forward(
    x: &Tensor,
    weights: &Tensor,
    stride: usize,
    pad: PadMode,
) -> TensorResult<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let (o, wc, kh, kw) = weights.dims4()?;
    if wc != c {
        return Err(TensorError::ShapeMismatch {
            left: x.shape().to_vec(),
            right: weights.shape().to_vec(),
        });
    }
    assert_eq!(kh, kw, "square kernels only");
    let (pt, pl) = pad_offsets(h, w, kh, stride, pad);
    let (oh, ow) = out_dims(h, w, kh, stride, pad);
    let dtype = x.dtype().promote(weights.dtype());
    let mut out = vec![0.0f64; n * o * oh * ow];
    let xd = x.data();
    let wd = weights.data();
    for b in 0..n {
        for oc in 0..o {
            let out_base = (b * o + oc) * oh * ow;
            for ic in 0..c {
                let in_base = (b * c + ic) * h * w;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = wd[((oc * c + ic) * kh + ky) * kw + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let (x0, x1) = ox_range(kx, pl, stride, w, ow);
                        for oy in 0..oh {
                            let iy = (oy * stride + ky) as isize - pt as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let row = in_base + iy as usize * w;
                            let orow = out_base + oy * ow;
                            for ox in x0..x1 {
                                let ix = ox * stride + kx - pl;
                                out[orow + ox] += wv * xd[row + ix];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[n, o, oh, ow], out, dtype)
}

/// Gradients of [`conv2d_forward`] wrt input and weights.
pub fn conv2d_backward(
    x: &Tensor,
    weights: &Tensor,
    stride: usize,
    pad: PadMode,
    gout: &Tensor,
) -> (Tensor, Tensor) {
    let (n, c, h, w) = x.dims4().expect("conv backward input");
    let (o, _, kh, kw) = weights.dims4().expect("conv backward weights");
    let (pt, pl) = pad_offsets(h, w, kh, stride, pad);
    let (_, _, oh, ow) = gout.dims4().expect("conv backward gout");
    let mut gx = vec![0.0f64; x.len()];
    let mut gw = vec![0.0f64; weights.len()];
    let xd = x.data();
    let wd = weights.data();
    let gd = gout.data();
    for b in 0..n {
        for oc in 0..o {
            let out_base = (b * o + oc) * oh * ow;
            for ic in 0..c {
                let in_base = (b * c + ic) * h * w;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let widx = ((oc * c + ic) * kh + ky) * kw + kx;
                        let wv = wd[widx];
                        let mut wacc = 0.0;
                        let (x0, x1) = ox_range(kx, pl, stride, w, ow);
                        for oy in 0..oh {
                            let iy = (oy * stride + ky) as isize - pt as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let row = in_base + iy as usize * w;
                            let orow = out_base + oy * ow;
                            for ox in x0..x1 {
                                let ix = ox * stride + kx - pl;
                                let g = gd[orow + ox];
                                wacc += g * xd[row + ix];
                                gx[row + ix] += g * wv;
                            }
                        }
                        gw[widx] += wacc;
                    }
                }
            }
        }
    }
    let gx = Tensor::from_vec(x.shape(), gx, gout.dtype()).expect("gx shape");
    let gw = Tensor::from_vec(weights.shape(), gw, gout.dtype()).expect("gw shape");
    (gx, gw)
}

/// Depthwise convolution forward. `x`: N×C×H×W, `w`: C×1×k×k, stride 1.
pub fn depthwise_forward(x: &Tensor, weights: &Tensor, pad: PadMode) -> TensorResult<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let (wcc, one, kh, kw) = weights.dims4()?;
    if wcc != c || one != 1 {
        return Err(TensorError::ShapeMismatch {
            left: x.shape().to_vec(),
            right: weights.shape().to_vec(),
        });
    }
    let (pt, pl) = pad_offsets(h, w, kh, 1, pad);
    let (oh, ow) = out_dims(h, w, kh, 1, pad);
    let dtype = x.dtype().promote(weights.dtype());
    let mut out = vec![0.0f64; n * c * oh * ow];
    let xd = x.data();
    let wd = weights.data();
    for b in 0..n {
        for ic in 0..c {
            let in_base = (b * c + ic) * h * w;
            let out_base = (b * c + ic) * oh * ow;
            for ky in 0..kh {
                for kx in 0..kw {
                    let wv = wd[(ic * kh + ky) * kw + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (x0, x1) = ox_range(kx, pl, 1, w, ow);
                    for oy in 0..oh {
                        let iy = (oy + ky) as isize - pt as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let row = in_base + iy as usize * w;
                        let orow = out_base + oy * ow;
                        for ox in x0..x1 {
                            out[orow + ox] += wv * xd[row + ox + kx - pl];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[n, c, oh, ow], out, dtype)
}

/// Gradients of [`depthwise_forward`].
pub fn depthwise_backward(
    x: &Tensor,
    weights: &Tensor,
    pad: PadMode,
    gout: &Tensor,
) -> (Tensor, Tensor) {
    let (n, c, h, w) = x.dims4().expect("dw backward input");
    let (_, _, kh, kw) = weights.dims4().expect("dw backward weights");
    let (pt, pl) = pad_offsets(h, w, kh, 1, pad);
    let (_, _, oh, ow) = gout.dims4().expect("dw backward gout");
    let mut gx = vec![0.0f64; x.len()];
    let mut gw = vec![0.0f64; weights.len()];
    let xd = x.data();
    let wd = weights.data();
    let gd = gout.data();
    for b in 0..n {
        for ic in 0..c {
            let in_base = (b * c + ic) * h * w;
            let out_base = (b * c + ic) * oh * ow;
            for ky in 0..kh {
                for kx in 0..kw {
                    let widx = (ic * kh + ky) * kw + kx;
                    let wv = wd[widx];
                    let mut wacc = 0.0;
                    let (x0, x1) = ox_range(kx, pl, 1, w, ow);
                    for oy in 0..oh {
                        let iy = (oy + ky) as isize - pt as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let row = in_base + iy as usize * w;
                        let orow = out_base + oy * ow;
                        for ox in x0..x1 {
                            let g = gd[orow + ox];
                            wacc += g * xd[row + ox + kx - pl];
                            gx[row + ox + kx - pl] += g * wv;
                        }
                    }
                    gw[widx] += wacc;
                }
            }
        }
    }
    let gx = Tensor::from_vec(x.shape(), gx, gout.dtype()).expect("gx shape");
    let gw = Tensor::from_vec(weights.shape(), gw, gout.dtype()).expect("gw shape");
    (gx, gw)
}

/// Differentiable standard convolution.
pub fn conv2d_op(tape: &Tape, x: Var, w: Var, stride: usize, pad: PadMode) -> TensorResult<Var> {
    let vx = tape.value(x);
    let vw = tape.value(w);
    let out = conv2d_forward(&vx, &vw, stride, pad)?;
    Ok(tape.push(
        out,
        vec![x, w],
        Some(Box::new(move |g| {
            let (gx, gw) = conv2d_backward(&vx, &vw, stride, pad, g);
            vec![gx, gw]
        })),
        false,
    ))
}

/// Differentiable depthwise convolution (stride 1).
pub fn depthwise_conv2d_op(tape: &Tape, x: Var, w: Var, pad: PadMode) -> TensorResult<Var> {
    let vx = tape.value(x);
    let vw = tape.value(w);
    let out = depthwise_forward(&vx, &vw, pad)?;
    Ok(tape.push(
        out,
        vec![x, w],
        Some(Box::new(move |g| {
            let (gx, gw) = depthwise_backward(&vx, &vw, pad, g);
            vec![gx, gw]
        })),
        false,
    ))
}

/// Standard convolution layer (used for 1×1 merges, projections and heads).
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub w: Param,
    pub b: Option<Param>,
    pub stride: usize,
    pub pad: PadMode,
}

impl Conv2d {
    pub fn new(
        in_c: usize,
        out_c: usize,
        k: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
        dtype: DType,
    ) -> Conv2d {
        let w = Param::new(he_uniform(&[out_c, in_c, k, k], in_c * k * k, rng, dtype));
        let b = bias.then(|| Param::new(Tensor::zeros(&[out_c], dtype)));
        Conv2d {
            w,
            b,
            stride: 1,
            pad: PadMode::Same,
        }
    }

    pub fn forward(&self, tape: &Tape, x: Var) -> Result<Var, LayerError> {
        let wv = self.w.on(tape);
        let mut y = conv2d_op(tape, x, wv, self.stride, self.pad)?;
        if let Some(b) = &self.b {
            y = crate::autograd::ops::add_channel_bias(tape, y, b.on(tape))?;
        }
        Ok(y)
    }

    pub fn out_channels(&self) -> usize {
        self.w.value().shape()[0]
    }
}

impl ParamVisit for Conv2d {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Param)) {
        f(format!("{prefix}.w"), &self.w);
        if let Some(b) = &self.b {
            f(format!("{prefix}.b"), b);
        }
    }
}

/// Depthwise-separable convolution: per-channel f×f convolution followed by
/// a 1×1 pointwise mix to `r` output channels.
///
/// With biases disabled the parameter count is `d·(f² + r)` exactly.
#[derive(Clone, Debug)]
pub struct DscLayer {
    pub depthwise: Param,
    pub pointwise: Param,
    pub bias: Option<Param>,
    pub pad: PadMode,
}

impl DscLayer {
    pub fn new(
        d: usize,
        r: usize,
        f: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
        dtype: DType,
    ) -> DscLayer {
        let depthwise = Param::new(he_uniform(&[d, 1, f, f], f * f, rng, dtype));
        let pointwise = Param::new(he_uniform(&[r, d, 1, 1], d, rng, dtype));
        let bias = bias.then(|| Param::new(Tensor::zeros(&[r], dtype)));
        DscLayer {
            depthwise,
            pointwise,
            bias,
            pad: PadMode::Same,
        }
    }

    pub fn forward(&self, tape: &Tape, x: Var) -> Result<Var, LayerError> {
        let dw = self.depthwise.on(tape);
        let pw = self.pointwise.on(tape);
        let mid = depthwise_conv2d_op(tape, x, dw, self.pad)?;
        let mut y = conv2d_op(tape, mid, pw, 1, PadMode::Same)?;
        if let Some(b) = &self.bias {
            y = crate::autograd::ops::add_channel_bias(tape, y, b.on(tape))?;
        }
        Ok(y)
    }

    /// Trainable scalar count.
    pub fn param_count(&self) -> u64 {
        let mut n = self.depthwise.len() + self.pointwise.len();
        if let Some(b) = &self.bias {
            n += b.len();
        }
        n as u64
    }
}

impl ParamVisit for DscLayer {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Param)) {
        f(format!("{prefix}.dw"), &self.depthwise);
        f(format!("{prefix}.pw"), &self.pointwise);
        if let Some(b) = &self.bias {
            f(format!("{prefix}.b"), b);
        }
    }
}
