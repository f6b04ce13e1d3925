//! Differentiable tensor operations recorded on a [`Tape`](super::Tape).
//!
//! Convolution, pooling and normalization ops live next to their layer types
//! in the `layers` module; this module holds the generic algebra every
//! component shares.

use crate::tensor::fft;
use crate::tensor::{bilinear_axis, Tensor, TensorResult};

use super::{Tape, Var};

pub fn add(tape: &Tape, a: Var, b: Var) -> TensorResult<Var> {
    let va = tape.value(a);
    let vb = tape.value(b);
    let out = va.add(&vb)?;
    Ok(tape.push(
        out,
        vec![a, b],
        Some(Box::new(move |g| vec![g.clone(), g.clone()])),
        false,
    ))
}

pub fn sub(tape: &Tape, a: Var, b: Var) -> TensorResult<Var> {
    let va = tape.value(a);
    let vb = tape.value(b);
    let out = va.sub(&vb)?;
    Ok(tape.push(
        out,
        vec![a, b],
        Some(Box::new(move |g| vec![g.clone(), g.scale(-1.0)])),
        false,
    ))
}

pub fn mul(tape: &Tape, a: Var, b: Var) -> TensorResult<Var> {
    let va = tape.value(a);
    let vb = tape.value(b);
    let out = va.mul(&vb)?;
    Ok(tape.push(
        out,
        vec![a, b],
        Some(Box::new(move |g| {
            vec![
                g.mul(&vb).expect("mul backward"),
                g.mul(&va).expect("mul backward"),
            ]
        })),
        false,
    ))
}

/// Elementwise quotient; used on scalar accumulators in loss terms.
pub fn div(tape: &Tape, a: Var, b: Var) -> TensorResult<Var> {
    let va = tape.value(a);
    let vb = tape.value(b);
    let out = va.div(&vb)?;
    Ok(tape.push(
        out,
        vec![a, b],
        Some(Box::new(move |g| {
            let ga = g.div(&vb).expect("div backward");
            let gb = g
                .mul(&va)
                .and_then(|t| t.div(&vb))
                .and_then(|t| t.div(&vb))
                .expect("div backward")
                .scale(-1.0);
            vec![ga, gb]
        })),
        false,
    ))
}

pub fn add_scalar(tape: &Tape, a: Var, s: f64) -> Var {
    let out = tape.value(a).add_scalar(s);
    tape.push(
        out,
        vec![a],
        Some(Box::new(move |g| vec![g.clone()])),
        false,
    )
}

pub fn scale(tape: &Tape, a: Var, s: f64) -> Var {
    let out = tape.value(a).scale(s);
    tape.push(
        out,
        vec![a],
        Some(Box::new(move |g| vec![g.scale(s)])),
        false,
    )
}

/// `s - a`, for complements like `1 - p`.
pub fn rsub_scalar(tape: &Tape, s: f64, a: Var) -> Var {
    let out = tape.value(a).scale(-1.0).add_scalar(s);
    tape.push(
        out,
        vec![a],
        Some(Box::new(move |g| vec![g.scale(-1.0)])),
        false,
    )
}

pub fn relu(tape: &Tape, a: Var) -> Var {
    let va = tape.value(a);
    let out = va.relu();
    tape.push(
        out,
        vec![a],
        Some(Box::new(move |g| {
            let mask = va.data();
            vec![Tensor::from_fn(g.shape(), g.dtype(), |i| {
                if mask[i] > 0.0 {
                    g.data()[i]
                } else {
                    0.0
                }
            })]
        })),
        false,
    )
}

pub fn sigmoid(tape: &Tape, a: Var) -> Var {
    let out = tape.value(a).sigmoid();
    let saved = out.clone();
    tape.push(
        out,
        vec![a],
        Some(Box::new(move |g| {
            let y = saved.data();
            vec![Tensor::from_fn(g.shape(), g.dtype(), |i| {
                g.data()[i] * y[i] * (1.0 - y[i])
            })]
        })),
        false,
    )
}

pub fn ln(tape: &Tape, a: Var) -> Var {
    let va = tape.value(a);
    let out = Tensor::from_fn(va.shape(), va.dtype(), |i| va.data()[i].ln());
    tape.push(
        out,
        vec![a],
        Some(Box::new(move |g| {
            vec![Tensor::from_fn(g.shape(), g.dtype(), |i| {
                g.data()[i] / va.data()[i]
            })]
        })),
        false,
    )
}

/// Clamp with pass-through gradient strictly inside `(lo, hi)`.
pub fn clamp(tape: &Tape, a: Var, lo: f64, hi: f64) -> Var {
    let va = tape.value(a);
    let out = va.clamp(lo, hi);
    tape.push(
        out,
        vec![a],
        Some(Box::new(move |g| {
            let x = va.data();
            vec![Tensor::from_fn(g.shape(), g.dtype(), |i| {
                if x[i] > lo && x[i] < hi {
                    g.data()[i]
                } else {
                    0.0
                }
            })]
        })),
        false,
    )
}

/// Sum of all elements as a one-element tensor.
pub fn sum(tape: &Tape, a: Var) -> Var {
    let va = tape.value(a);
    let out = Tensor::scalar(va.sum(), va.dtype());
    let shape = va.shape().to_vec();
    let dtype = va.dtype();
    tape.push(
        out,
        vec![a],
        Some(Box::new(move |g| {
            vec![Tensor::full(&shape, g.data()[0], dtype)]
        })),
        false,
    )
}

/// Mean of all elements as a one-element tensor.
pub fn mean(tape: &Tape, a: Var) -> Var {
    let va = tape.value(a);
    let n = va.len() as f64;
    let out = Tensor::scalar(va.mean(), va.dtype());
    let shape = va.shape().to_vec();
    let dtype = va.dtype();
    tape.push(
        out,
        vec![a],
        Some(Box::new(move |g| {
            vec![Tensor::full(&shape, g.data()[0] / n, dtype)]
        })),
        false,
    )
}

/// Channel concatenation of 4-D maps; backward splits the gradient.
pub fn concat_channels(tape: &Tape, parts: &[Var]) -> TensorResult<Var> {
    let values: Vec<Tensor> = parts.iter().map(|&v| tape.value(v)).collect();
    let refs: Vec<&Tensor> = values.iter().collect();
    let out = Tensor::concat_channels(&refs)?;
    let channel_counts: Vec<usize> = values.iter().map(|t| t.shape()[1]).collect();
    Ok(tape.push(
        out,
        parts.to_vec(),
        Some(Box::new(move |g| {
            let mut grads = Vec::with_capacity(channel_counts.len());
            let mut from = 0;
            for &c in &channel_counts {
                grads.push(g.slice_channels(from, from + c).expect("concat backward"));
                from += c;
            }
            grads
        })),
        false,
    ))
}

/// Per-channel bias on NCHW maps.
pub fn add_channel_bias(tape: &Tape, x: Var, b: Var) -> TensorResult<Var> {
    let vx = tape.value(x);
    let vb = tape.value(b);
    let (n, c, h, w) = vx.dims4()?;
    assert_eq!(vb.len(), c, "bias length must equal channel count");
    let dtype = vx.dtype().promote(vb.dtype());
    let hw = h * w;
    let out = Tensor::from_fn(vx.shape(), dtype, |i| {
        let ch = (i / hw) % c;
        vx.data()[i] + vb.data()[ch]
    });
    let b_dtype = vb.dtype();
    Ok(tape.push(
        out,
        vec![x, b],
        Some(Box::new(move |g| {
            let mut gb = vec![0.0; c];
            for i in 0..g.len() {
                gb[(i / hw) % c] += g.data()[i];
            }
            let _ = n;
            vec![
                g.clone(),
                Tensor::from_vec(&[c], gb, b_dtype).expect("bias grad"),
            ]
        })),
        false,
    ))
}

/// Multiplies an NCHW map by a single-channel gate, broadcast over channels.
pub fn mul_gate(tape: &Tape, x: Var, gate: Var) -> TensorResult<Var> {
    let vx = tape.value(x);
    let vg = tape.value(gate);
    let (n, c, h, w) = vx.dims4()?;
    let (gn, gc, gh, gw) = vg.dims4()?;
    assert!(
        gn == n && gc == 1 && gh == h && gw == w,
        "gate must be N×1×H×W matching the input"
    );
    let hw = h * w;
    let dtype = vx.dtype().promote(vg.dtype());
    let out = Tensor::from_fn(vx.shape(), dtype, |i| {
        let b = i / (c * hw);
        let pix = i % hw;
        vx.data()[i] * vg.data()[b * hw + pix]
    });
    let (vx2, vg2) = (vx.clone(), vg.clone());
    Ok(tape.push(
        out,
        vec![x, gate],
        Some(Box::new(move |g| {
            let gx = Tensor::from_fn(vx2.shape(), g.dtype(), |i| {
                let b = i / (c * hw);
                let pix = i % hw;
                g.data()[i] * vg2.data()[b * hw + pix]
            });
            let mut ga = vec![0.0; n * hw];
            for i in 0..g.len() {
                let b = i / (c * hw);
                let pix = i % hw;
                ga[b * hw + pix] += g.data()[i] * vx2.data()[i];
            }
            let ga = Tensor::from_vec(&[n, 1, h, w], ga, g.dtype()).expect("gate grad");
            vec![gx, ga]
        })),
        false,
    ))
}

/// Differentiable bilinear resize; backward scatters the interpolation
/// weights (the exact adjoint of the forward map).
pub fn resize_bilinear(tape: &Tape, x: Var, out_h: usize, out_w: usize) -> TensorResult<Var> {
    let vx = tape.value(x);
    let (h, w) = vx.spatial()?;
    let out = vx.resize_bilinear(out_h, out_w)?;
    if out_h == h && out_w == w {
        return Ok(tape.push(
            out,
            vec![x],
            Some(Box::new(move |g| vec![g.clone()])),
            false,
        ));
    }
    let lead: usize = vx.shape()[..vx.shape().len() - 2].iter().product();
    let in_shape = vx.shape().to_vec();
    Ok(tape.push(
        out,
        vec![x],
        Some(Box::new(move |g| {
            let mut gx = vec![0.0; lead * h * w];
            for l in 0..lead {
                let gsrc = &g.data()[l * out_h * out_w..(l + 1) * out_h * out_w];
                let dst = &mut gx[l * h * w..(l + 1) * h * w];
                for oy in 0..out_h {
                    let (y0, y1, fy) = bilinear_axis(oy, out_h, h);
                    for ox in 0..out_w {
                        let (x0, x1, fx) = bilinear_axis(ox, out_w, w);
                        let gv = gsrc[oy * out_w + ox];
                        dst[y0 * w + x0] += gv * (1.0 - fy) * (1.0 - fx);
                        dst[y0 * w + x1] += gv * (1.0 - fy) * fx;
                        dst[y1 * w + x0] += gv * fy * (1.0 - fx);
                        dst[y1 * w + x1] += gv * fy * fx;
                    }
                }
            }
            vec![Tensor::from_vec(&in_shape, gx, g.dtype()).expect("resize grad")]
        })),
        false,
    ))
}

/// Band-limited spectral downsample (DFT → centered crop → inverse DFT) with
/// the conjugate-transpose transform as its gradient.
pub fn spectral_downsample(tape: &Tape, x: Var, out_h: usize, out_w: usize) -> Var {
    let vx = tape.value(x);
    let (h, w) = vx.spatial().expect("spectral downsample needs spatial dims");
    let out = fft::spectral_downsample(&vx, out_h, out_w).expect("spectral downsample");
    tape.push(
        out,
        vec![x],
        Some(Box::new(move |g| {
            vec![fft::spectral_downsample_adjoint(g, h, w)]
        })),
        false,
    )
}

/// Same-size spectral low-pass with its adjoint as gradient.
pub fn spectral_lowpass(tape: &Tape, x: Var) -> Var {
    let vx = tape.value(x);
    let out = fft::spectral_lowpass(&vx).expect("spectral lowpass");
    tape.push(
        out,
        vec![x],
        Some(Box::new(move |g| vec![fft::spectral_lowpass_adjoint(g)])),
        false,
    )
}
