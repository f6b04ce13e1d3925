//! Exact 2-D discrete Fourier transforms and the spectral pooling primitives
//! built on them: centered low-frequency cropping, spectrum re-embedding, and
//! the band-limited downsample / low-pass maps plus their adjoints.
//!
//! Transforms run through rustfft row-by-row then column-by-column, so any
//! spatial size is supported. Correctness is pinned against a naive
//! double-loop DFT oracle in the test suite.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftDirection, FftPlanner};

use super::{ComplexTensor, DType, Tensor};

/// Errors from spectral operations.
#[derive(Clone, Debug, PartialEq)]
pub enum FftError {
    /// An inverse transform was asked to produce a real tensor but the
    /// spectrum was not Hermitian-symmetric.
    SymmetryViolation { max_imag: f64 },
    /// Crop target exceeds the source spectrum dims.
    BadCropSize {
        from: (usize, usize),
        to: (usize, usize),
    },
}

impl fmt::Display for FftError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FftError::SymmetryViolation { max_imag } => write!(
                f,
                "inverse DFT of a non-Hermitian spectrum: max |imag| = {max_imag:e} >= 1e-6"
            ),
            FftError::BadCropSize { from, to } => {
                write!(f, "cannot crop {from:?} spectrum to {to:?}")
            }
        }
    }
}

impl std::error::Error for FftError {}

/// Residual imaginary magnitude tolerated when demanding a real result.
pub const IMAG_TOLERANCE: f64 = 1e-6;

fn plan(len: usize, direction: FftDirection) -> Arc<dyn Fft<f64>> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, bool), Arc<dyn Fft<f64>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let key = (len, direction == FftDirection::Forward);
    let mut guard = cache.lock().unwrap();
    if let Some(f) = guard.get(&key) {
        return Arc::clone(f);
    }
    let mut planner = FftPlanner::new();
    let f = planner.plan_fft(len, direction);
    guard.insert(key, Arc::clone(&f));
    f
}

/// In-place unnormalized 2-D transform of each leading slice.
/// Forward uses exp(-2πi·), inverse uses exp(+2πi·) with no 1/(HW) factor.
fn transform2d(x: &mut ComplexTensor, direction: FftDirection) {
    let (h, w) = x.spatial();
    let lead = x.lead();
    let row_fft = plan(w, direction);
    let col_fft = plan(h, direction);
    let mut row_scratch = vec![Complex::default(); row_fft.get_inplace_scratch_len()];
    let mut col_scratch = vec![Complex::default(); col_fft.get_inplace_scratch_len()];
    let mut buf = vec![Complex::default(); h * w];
    let mut col = vec![Complex::default(); h];
    let (re, im) = x.parts_mut();
    for l in 0..lead {
        let base = l * h * w;
        for i in 0..h * w {
            buf[i] = Complex::new(re[base + i], im[base + i]);
        }
        for row in buf.chunks_exact_mut(w) {
            row_fft.process_with_scratch(row, &mut row_scratch);
        }
        for cx in 0..w {
            for cy in 0..h {
                col[cy] = buf[cy * w + cx];
            }
            col_fft.process_with_scratch(&mut col, &mut col_scratch);
            for cy in 0..h {
                buf[cy * w + cx] = col[cy];
            }
        }
        for i in 0..h * w {
            re[base + i] = buf[i].re;
            im[base + i] = buf[i].im;
        }
    }
}

/// Unnormalized forward DFT per channel:
/// `X[u,v] = Σ_{h,w} x[h,w]·exp(-2πi(uh/H + vw/W))`.
///
/// The output of a real input satisfies Hermitian symmetry.
pub fn dft2d(x: &Tensor) -> ComplexTensor {
    let mut c = ComplexTensor::from_real(x);
    transform2d(&mut c, FftDirection::Forward);
    c
}

/// Normalized inverse DFT demanding a real result.
///
/// Returns `(1/(H·W))·Σ X[u,v]·exp(+2πi(uh/H + vw/W))` with the imaginary
/// residue discarded, or [`FftError::SymmetryViolation`] when the residue
/// exceeds [`IMAG_TOLERANCE`] (the spectrum was not Hermitian).
pub fn idft2d(spectrum: &ComplexTensor) -> Result<Tensor, FftError> {
    let (h, w) = spectrum.spatial();
    let mut c = spectrum.clone();
    transform2d(&mut c, FftDirection::Inverse);
    let norm = 1.0 / (h * w) as f64;
    let max_imag = c.max_abs_im() * norm;
    if max_imag >= IMAG_TOLERANCE {
        return Err(FftError::SymmetryViolation { max_imag });
    }
    let data: Vec<f64> = c.re().iter().map(|&v| v * norm).collect();
    Ok(Tensor::from_vec(spectrum.shape(), data, DType::F64).expect("idft2d shape"))
}

/// Signed frequency of bin `u` on a grid of `m` samples.
fn freq(u: usize, m: usize) -> isize {
    if u <= m / 2 {
        u as isize
    } else {
        u as isize - m as isize
    }
}

/// Big-grid bin positions a small-grid frequency draws from.
///
/// Interior frequencies map to a single bin. The Nyquist frequency of an
/// even-sized target aliases +m/2 and -m/2, which are distinct source bins
/// whenever the source grid is strictly larger; both are returned and the
/// caller averages them, which is what restores Hermitian symmetry at the
/// band edge.
fn alias_positions(f: isize, small: usize, big: usize) -> (usize, usize, usize) {
    let pos = |f: isize| -> usize { f.rem_euclid(big as isize) as usize };
    if small % 2 == 0 && f == (small / 2) as isize {
        let a = pos(f);
        let b = pos(-f);
        if a == b {
            (a, a, 1)
        } else {
            (a, b, 2)
        }
    } else {
        let a = pos(f);
        (a, a, 1)
    }
}

/// Keeps the centered low-frequency block of a spectrum.
///
/// Retains frequencies in `(-⌈out/2⌉, ⌊out/2⌋]` per axis, averages the
/// conjugate-aliased band-edge bins so the result stays Hermitian for
/// Hermitian input, and rescales by `(outH·outW)/(H·W)` so constant images
/// survive a crop → [`idft2d`] round trip unchanged.
pub fn crop_spectrum(
    spectrum: &ComplexTensor,
    out_h: usize,
    out_w: usize,
) -> Result<ComplexTensor, FftError> {
    let (h, w) = spectrum.spatial();
    if out_h == 0 || out_w == 0 || out_h > h || out_w > w {
        return Err(FftError::BadCropSize {
            from: (h, w),
            to: (out_h, out_w),
        });
    }
    let lead = spectrum.lead();
    let scale = (out_h * out_w) as f64 / (h * w) as f64;
    let mut shape = spectrum.shape().to_vec();
    let r = shape.len();
    shape[r - 2] = out_h;
    shape[r - 1] = out_w;
    let n = lead * out_h * out_w;
    let mut re = vec![0.0; n];
    let mut im = vec![0.0; n];
    for l in 0..lead {
        let src = l * h * w;
        let dst = l * out_h * out_w;
        for u in 0..out_h {
            let (ya, yb, yc) = alias_positions(freq(u, out_h), out_h, h);
            for v in 0..out_w {
                let (xa, xb, xc) = alias_positions(freq(v, out_w), out_w, w);
                let mut acc_re = 0.0;
                let mut acc_im = 0.0;
                for &py in [ya, yb].iter().take(yc) {
                    for &px in [xa, xb].iter().take(xc) {
                        acc_re += spectrum.re()[src + py * w + px];
                        acc_im += spectrum.im()[src + py * w + px];
                    }
                }
                let norm = scale / (yc * xc) as f64;
                re[dst + u * out_w + v] = acc_re * norm;
                im[dst + u * out_w + v] = acc_im * norm;
            }
        }
    }
    ComplexTensor::new(&shape, re, im).map_err(|_| FftError::BadCropSize {
        from: (h, w),
        to: (out_h, out_w),
    })
}

/// Re-embeds a cropped spectrum into a larger grid, inverting the crop's
/// scaling. Band-edge bins are replicated to every alias position, which
/// keeps the result Hermitian for Hermitian input and makes
/// `crop_spectrum(pad_spectrum(X, H, W), h, w)` the identity, so the
/// pad∘crop low-pass is a true projection.
pub fn pad_spectrum(
    spectrum: &ComplexTensor,
    out_h: usize,
    out_w: usize,
) -> Result<ComplexTensor, FftError> {
    let (h, w) = spectrum.spatial();
    if out_h < h || out_w < w {
        return Err(FftError::BadCropSize {
            from: (h, w),
            to: (out_h, out_w),
        });
    }
    let lead = spectrum.lead();
    let scale = (h * w) as f64 / (out_h * out_w) as f64;
    let mut shape = spectrum.shape().to_vec();
    let r = shape.len();
    shape[r - 2] = out_h;
    shape[r - 1] = out_w;
    let n = lead * out_h * out_w;
    let mut re = vec![0.0; n];
    let mut im = vec![0.0; n];
    for l in 0..lead {
        let src = l * h * w;
        let dst = l * out_h * out_w;
        for u in 0..h {
            let (ya, yb, yc) = alias_positions(freq(u, h), h, out_h);
            for v in 0..w {
                let (xa, xb, xc) = alias_positions(freq(v, w), w, out_w);
                let vr = spectrum.re()[src + u * w + v] / scale;
                let vi = spectrum.im()[src + u * w + v] / scale;
                for &py in [ya, yb].iter().take(yc) {
                    for &px in [xa, xb].iter().take(xc) {
                        re[dst + py * out_w + px] += vr;
                        im[dst + py * out_w + px] += vi;
                    }
                }
            }
        }
    }
    ComplexTensor::new(&shape, re, im).map_err(|_| FftError::BadCropSize {
        from: (h, w),
        to: (out_h, out_w),
    })
}

/// Band-limited downsample of each channel: DFT → centered crop → inverse DFT.
pub fn spectral_downsample(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor, FftError> {
    let spectrum = dft2d(x);
    let cropped = crop_spectrum(&spectrum, out_h, out_w)?;
    Ok(idft2d(&cropped)?.cast(x.dtype()))
}

/// Same-size spectral low-pass: crop to `(⌈H/2⌉, ⌈W/2⌉)`, re-embed into the
/// original grid, inverse transform.
pub fn spectral_lowpass(x: &Tensor) -> Result<Tensor, FftError> {
    let (h, w) = x.spatial().expect("lowpass needs spatial dims");
    let spectrum = dft2d(x);
    let cropped = crop_spectrum(&spectrum, h.div_ceil(2), w.div_ceil(2))?;
    let padded = pad_spectrum(&cropped, h, w)?;
    Ok(idft2d(&padded)?.cast(x.dtype()))
}

/// Scatter adjoint of [`crop_spectrum`].
fn crop_adjoint(grad: &ComplexTensor, in_h: usize, in_w: usize) -> ComplexTensor {
    let (oh, ow) = grad.spatial();
    let lead = grad.lead();
    let scale = (oh * ow) as f64 / (in_h * in_w) as f64;
    let mut shape = grad.shape().to_vec();
    let r = shape.len();
    shape[r - 2] = in_h;
    shape[r - 1] = in_w;
    let mut out = ComplexTensor::zeros(&shape);
    {
        let n_small = oh * ow;
        let n_big = in_h * in_w;
        let (re, im) = out.parts_mut();
        for l in 0..lead {
            let src = l * n_small;
            let dst = l * n_big;
            for u in 0..oh {
                let (ya, yb, yc) = alias_positions(freq(u, oh), oh, in_h);
                for v in 0..ow {
                    let (xa, xb, xc) = alias_positions(freq(v, ow), ow, in_w);
                    let coef = scale / (yc * xc) as f64;
                    let gr = grad.re()[src + u * ow + v] * coef;
                    let gi = grad.im()[src + u * ow + v] * coef;
                    for &py in [ya, yb].iter().take(yc) {
                        for &px in [xa, xb].iter().take(xc) {
                            re[dst + py * in_w + px] += gr;
                            im[dst + py * in_w + px] += gi;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gather adjoint of [`pad_spectrum`].
fn pad_adjoint(grad: &ComplexTensor, in_h: usize, in_w: usize) -> ComplexTensor {
    let (oh, ow) = grad.spatial();
    let lead = grad.lead();
    let scale = (in_h * in_w) as f64 / (oh * ow) as f64;
    let mut shape = grad.shape().to_vec();
    let r = shape.len();
    shape[r - 2] = in_h;
    shape[r - 1] = in_w;
    let mut out = ComplexTensor::zeros(&shape);
    {
        let n_small = in_h * in_w;
        let n_big = oh * ow;
        let (re, im) = out.parts_mut();
        for l in 0..lead {
            let src = l * n_big;
            let dst = l * n_small;
            for u in 0..in_h {
                let (ya, yb, yc) = alias_positions(freq(u, in_h), in_h, oh);
                for v in 0..in_w {
                    let (xa, xb, xc) = alias_positions(freq(v, in_w), in_w, ow);
                    let mut gr = 0.0;
                    let mut gi = 0.0;
                    for &py in [ya, yb].iter().take(yc) {
                        for &px in [xa, xb].iter().take(xc) {
                            gr += grad.re()[src + py * ow + px];
                            gi += grad.im()[src + py * ow + px];
                        }
                    }
                    re[dst + u * in_w + v] += gr / scale;
                    im[dst + u * in_w + v] += gi / scale;
                }
            }
        }
    }
    out
}

/// Adjoint of [`spectral_downsample`] as a real-linear map: routes an
/// upstream gradient on the small grid back to the input grid.
pub fn spectral_downsample_adjoint(grad: &Tensor, in_h: usize, in_w: usize) -> Tensor {
    let (oh, ow) = grad.spatial().expect("adjoint needs spatial dims");
    let mut g = ComplexTensor::from_real(grad);
    transform2d(&mut g, FftDirection::Forward);
    let norm = 1.0 / (oh * ow) as f64;
    let scattered = {
        let (re, im) = g.parts_mut();
        re.iter_mut().for_each(|v| *v *= norm);
        im.iter_mut().for_each(|v| *v *= norm);
        crop_adjoint(&g, in_h, in_w)
    };
    let mut back = scattered;
    transform2d(&mut back, FftDirection::Inverse);
    Tensor::from_vec(back.shape(), back.re().to_vec(), DType::F64)
        .expect("adjoint shape")
        .cast(grad.dtype())
}

/// Adjoint of [`spectral_lowpass`].
pub fn spectral_lowpass_adjoint(grad: &Tensor) -> Tensor {
    let (h, w) = grad.spatial().expect("adjoint needs spatial dims");
    let (ch, cw) = (h.div_ceil(2), w.div_ceil(2));
    let mut g = ComplexTensor::from_real(grad);
    transform2d(&mut g, FftDirection::Forward);
    let norm = 1.0 / (h * w) as f64;
    {
        let (re, im) = g.parts_mut();
        re.iter_mut().for_each(|v| *v *= norm);
        im.iter_mut().for_each(|v| *v *= norm);
    }
    let gathered = pad_adjoint(&g, ch, cw);
    let scattered = crop_adjoint(&gathered, h, w);
    let mut back = scattered;
    transform2d(&mut back, FftDirection::Inverse);
    Tensor::from_vec(back.shape(), back.re().to_vec(), DType::F64)
        .expect("adjoint shape")
        .cast(grad.dtype())
}
