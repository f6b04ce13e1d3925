//! 2×2 stride-2 transposed convolution, the decoder's upsampling step.

use rand_chacha::ChaCha8Rng;

use crate::autograd::{ops, Tape, Var};
use crate::tensor::{DType, Tensor, TensorResult};

use super::{he_uniform, LayerError, Param, ParamVisit};

/// Transposed convolution forward. `x`: N×C×H×W, `w`: C×O×2×2, output
/// N×O×2H×2W. Each input pixel contributes one tap per output position, so
/// the map is the exact adjoint of a 2×2 stride-2 valid convolution with the
/// same kernel.
pub fn conv_transpose2x2_forward(x: &Tensor, weights: &Tensor) -> TensorResult<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let (wc, o, kh, kw) = weights.dims4()?;
    assert_eq!(kh, 2);
    assert_eq!(kw, 2);
    assert_eq!(wc, c, "transposed conv weight depth must match input");
    let (oh, ow) = (2 * h, 2 * w);
    let dtype = x.dtype().promote(weights.dtype());
    let mut out = vec![0.0f64; n * o * oh * ow];
    let xd = x.data();
    let wd = weights.data();
    for b in 0..n {
        for ic in 0..c {
            let in_base = (b * c + ic) * h * w;
            for oc in 0..o {
                let out_base = (b * o + oc) * oh * ow;
                for ky in 0..2 {
                    for kx in 0..2 {
                        let wv = wd[((ic * o + oc) * 2 + ky) * 2 + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        for y in 0..h {
                            let orow = out_base + (2 * y + ky) * ow + kx;
                            let irow = in_base + y * w;
                            for xcol in 0..w {
                                out[orow + 2 * xcol] += wv * xd[irow + xcol];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[n, o, oh, ow], out, dtype)
}

fn conv_transpose2x2_backward(x: &Tensor, weights: &Tensor, gout: &Tensor) -> (Tensor, Tensor) {
    let (n, c, h, w) = x.dims4().expect("upsample backward input");
    let (_, o, _, _) = weights.dims4().expect("upsample backward weights");
    let ow = 2 * w;
    let mut gx = vec![0.0f64; x.len()];
    let mut gw = vec![0.0f64; weights.len()];
    let xd = x.data();
    let wd = weights.data();
    let gd = gout.data();
    for b in 0..n {
        for ic in 0..c {
            let in_base = (b * c + ic) * h * w;
            for oc in 0..o {
                let out_base = (b * o + oc) * (2 * h) * ow;
                for ky in 0..2 {
                    for kx in 0..2 {
                        let widx = ((ic * o + oc) * 2 + ky) * 2 + kx;
                        let wv = wd[widx];
                        let mut wacc = 0.0;
                        for y in 0..h {
                            let orow = out_base + (2 * y + ky) * ow + kx;
                            let irow = in_base + y * w;
                            for xcol in 0..w {
                                let g = gd[orow + 2 * xcol];
                                wacc += g * xd[irow + xcol];
                                gx[irow + xcol] += g * wv;
                            }
                        }
                        gw[widx] += wacc;
                    }
                }
            }
        }
    }
    (
        Tensor::from_vec(x.shape(), gx, gout.dtype()).expect("gx"),
        Tensor::from_vec(weights.shape(), gw, gout.dtype()).expect("gw"),
    )
}

/// Differentiable 2×2 stride-2 transposed convolution.
pub fn conv_transpose2x2_op(tape: &Tape, x: Var, w: Var) -> TensorResult<Var> {
    let vx = tape.value(x);
    let vw = tape.value(w);
    let out = conv_transpose2x2_forward(&vx, &vw)?;
    Ok(tape.push(
        out,
        vec![x, w],
        Some(Box::new(move |g| {
            let (gx, gw) = conv_transpose2x2_backward(&vx, &vw, g);
            vec![gx, gw]
        })),
        false,
    ))
}

/// Learned upsampling layer doubling H and W.
#[derive(Clone, Debug)]
pub struct UpsampleLayer {
    pub w: Param,
    pub b: Param,
}

impl UpsampleLayer {
    pub fn new(in_c: usize, out_c: usize, rng: &mut ChaCha8Rng, dtype: DType) -> Self {
        // Each output pixel sees exactly one tap per input channel.
        UpsampleLayer {
            w: Param::new(he_uniform(&[in_c, out_c, 2, 2], in_c, rng, dtype)),
            b: Param::new(Tensor::zeros(&[out_c], dtype)),
        }
    }

    pub fn forward(&self, tape: &Tape, x: Var) -> Result<Var, LayerError> {
        let y = conv_transpose2x2_op(tape, x, self.w.on(tape))?;
        Ok(ops::add_channel_bias(tape, y, self.b.on(tape))?)
    }
}

impl ParamVisit for UpsampleLayer {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Param)) {
        f(format!("{prefix}.w"), &self.w);
        f(format!("{prefix}.b"), &self.b);
    }
}
