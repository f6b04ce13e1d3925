//! Dense real/complex tensors in NCHW row-major layout.
//!
//! Tensors are immutable after construction: every operation returns a new
//! tensor. The scalar buffer is reference counted, so clones are cheap and
//! values can be shared freely across threads and autograd tapes.
//!
//! Two dtypes are supported. `F64` is the full-precision dtype used by
//! gradient checks and oracles. `F32` tensors store every scalar rounded to
//! f32 precision while arithmetic still accumulates in f64; this keeps a
//! single code path and makes results deterministic regardless of dtype.

use std::fmt;
use std::sync::Arc;

mod complex;
pub mod fft;
pub mod rten;

pub use complex::ComplexTensor;

/// Scalar precision of a [`Tensor`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum DType {
    #[serde(rename = "f32")]
    F32,
    #[serde(rename = "f64")]
    F64,
}

impl DType {
    /// Wider of two dtypes, used for binary op results.
    pub fn promote(self, other: DType) -> DType {
        if self == DType::F64 || other == DType::F64 {
            DType::F64
        } else {
            DType::F32
        }
    }

    fn quantize(self, x: f64) -> f64 {
        match self {
            DType::F64 => x,
            DType::F32 => x as f32 as f64,
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DType::F32 => write!(f, "f32"),
            DType::F64 => write!(f, "f64"),
        }
    }
}

/// Result alias for tensor operations.
pub type TensorResult<T> = Result<T, TensorError>;

/// Errors emitted by tensor construction and algebra.
#[derive(Clone, Debug, PartialEq)]
pub enum TensorError {
    /// A shape contained a zero-sized dimension or was empty.
    InvalidShape { shape: Vec<usize> },
    /// Buffer length does not match the product of the dimensions.
    DataLength { expected: usize, got: usize },
    /// Two operands cannot be combined elementwise.
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },
    /// An operation required a specific rank.
    BadRank { expected: usize, got: usize },
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::InvalidShape { shape } => {
                write!(f, "invalid tensor shape {:?}: all dims must be >= 1", shape)
            }
            TensorError::DataLength { expected, got } => {
                write!(f, "data length mismatch: expected {expected}, got {got}")
            }
            TensorError::ShapeMismatch { left, right } => {
                write!(f, "shape mismatch: {:?} vs {:?}", left, right)
            }
            TensorError::BadRank { expected, got } => {
                write!(f, "expected rank {expected}, got rank {got}")
            }
        }
    }
}

impl std::error::Error for TensorError {}

/// Dense N-dimensional real array, row-major, NCHW for 4-D feature maps.
#[derive(Clone, Debug)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    dtype: DType,
}

impl Tensor {
    /// Builds a tensor from a flat row-major buffer.
    pub fn from_vec(shape: &[usize], data: Vec<f64>, dtype: DType) -> TensorResult<Tensor> {
        let n = check_shape(shape)?;
        if data.len() != n {
            return Err(TensorError::DataLength {
                expected: n,
                got: data.len(),
            });
        }
        let data = match dtype {
            DType::F64 => data,
            DType::F32 => data.into_iter().map(|x| x as f32 as f64).collect(),
        };
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Arc::new(data),
            dtype,
        })
    }

    /// All-zero tensor.
    pub fn zeros(shape: &[usize], dtype: DType) -> Tensor {
        let n = check_shape(shape).expect("zeros: invalid shape");
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(vec![0.0; n]),
            dtype,
        }
    }

    /// Tensor filled with a constant.
    pub fn full(shape: &[usize], value: f64, dtype: DType) -> Tensor {
        let n = check_shape(shape).expect("full: invalid shape");
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(vec![dtype.quantize(value); n]),
            dtype,
        }
    }

    /// Builds a tensor by evaluating `f` at each flat index.
    pub fn from_fn(shape: &[usize], dtype: DType, mut f: impl FnMut(usize) -> f64) -> Tensor {
        let n = check_shape(shape).expect("from_fn: invalid shape");
        let data: Vec<f64> = (0..n).map(|i| dtype.quantize(f(i))).collect();
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(data),
            dtype,
        }
    }

    /// Scalar wrapped as a rank-1 tensor of length one.
    pub fn scalar(value: f64, dtype: DType) -> Tensor {
        Tensor::full(&[1], value, dtype)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Reinterprets the buffer under a new shape with the same element count.
    pub fn reshape(&self, shape: &[usize]) -> TensorResult<Tensor> {
        let n = check_shape(shape)?;
        if n != self.len() {
            return Err(TensorError::DataLength {
                expected: self.len(),
                got: n,
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Arc::clone(&self.data),
            dtype: self.dtype,
        })
    }

    /// Same buffer re-tagged with a different dtype (quantizing if narrowing).
    pub fn cast(&self, dtype: DType) -> Tensor {
        if dtype == self.dtype {
            return self.clone();
        }
        Tensor::from_vec(&self.shape, self.data.to_vec(), dtype).expect("cast preserves length")
    }

    /// Dimensions of a 4-D NCHW tensor.
    pub fn dims4(&self) -> TensorResult<(usize, usize, usize, usize)> {
        if self.shape.len() != 4 {
            return Err(TensorError::BadRank {
                expected: 4,
                got: self.shape.len(),
            });
        }
        Ok((self.shape[0], self.shape[1], self.shape[2], self.shape[3]))
    }

    /// Spatial dims (last two axes) for tensors of rank >= 2.
    pub fn spatial(&self) -> TensorResult<(usize, usize)> {
        let r = self.shape.len();
        if r < 2 {
            return Err(TensorError::BadRank {
                expected: 2,
                got: r,
            });
        }
        Ok((self.shape[r - 2], self.shape[r - 1]))
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        let dtype = self.dtype;
        let data: Vec<f64> = self.data.iter().map(|&x| dtype.quantize(f(x))).collect();
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(data),
            dtype,
        }
    }

    fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> TensorResult<Tensor> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let dtype = self.dtype.promote(other.dtype);
        let data: Vec<f64> = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| dtype.quantize(f(a, b)))
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data: Arc::new(data),
            dtype,
        })
    }

    pub fn add(&self, other: &Tensor) -> TensorResult<Tensor> {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> TensorResult<Tensor> {
        self.zip(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> TensorResult<Tensor> {
        self.zip(other, |a, b| a * b)
    }

    pub fn div(&self, other: &Tensor) -> TensorResult<Tensor> {
        self.zip(other, |a, b| a / b)
    }

    pub fn add_scalar(&self, s: f64) -> Tensor {
        self.map(|x| x + s)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|x| x * s)
    }

    pub fn relu(&self) -> Tensor {
        self.map(|x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn sigmoid(&self) -> Tensor {
        self.map(sigmoid_scalar)
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        self.map(|x| x.clamp(lo, hi))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.len() as f64
    }

    /// Largest element.
    pub fn max_reduce(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Concatenates 4-D tensors along the channel axis.
    pub fn concat_channels(parts: &[&Tensor]) -> TensorResult<Tensor> {
        assert!(!parts.is_empty(), "concat_channels: no inputs");
        let (n, _, h, w) = parts[0].dims4()?;
        let mut dtype = parts[0].dtype;
        let mut c_total = 0;
        for p in parts {
            let (pn, pc, ph, pw) = p.dims4()?;
            if pn != n || ph != h || pw != w {
                return Err(TensorError::ShapeMismatch {
                    left: parts[0].shape.clone(),
                    right: p.shape.clone(),
                });
            }
            c_total += pc;
            dtype = dtype.promote(p.dtype);
        }
        let hw = h * w;
        let mut data = Vec::with_capacity(n * c_total * hw);
        for b in 0..n {
            for p in parts {
                let pc = p.shape[1];
                let start = b * pc * hw;
                data.extend_from_slice(&p.data[start..start + pc * hw]);
            }
        }
        Tensor::from_vec(&[n, c_total, h, w], data, dtype)
    }

    /// Extracts a contiguous channel range of a 4-D tensor.
    pub fn slice_channels(&self, from: usize, to: usize) -> TensorResult<Tensor> {
        let (n, c, h, w) = self.dims4()?;
        assert!(from < to && to <= c, "slice_channels: bad range");
        let hw = h * w;
        let cs = to - from;
        let mut data = Vec::with_capacity(n * cs * hw);
        for b in 0..n {
            let start = (b * c + from) * hw;
            data.extend_from_slice(&self.data[start..start + cs * hw]);
        }
        Tensor::from_vec(&[n, cs, h, w], data, self.dtype)
    }

    /// Bilinear resize of the spatial axes with half-pixel-centered sampling.
    ///
    /// Exact identity when the output size equals the input size.
    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> TensorResult<Tensor> {
        let (h, w) = self.spatial()?;
        assert!(out_h >= 1 && out_w >= 1, "resize_bilinear: empty output");
        if out_h == h && out_w == w {
            return Ok(self.clone());
        }
        let lead: usize = self.shape[..self.shape.len() - 2].iter().product();
        let mut out_shape = self.shape.clone();
        let r = out_shape.len();
        out_shape[r - 2] = out_h;
        out_shape[r - 1] = out_w;
        let dtype = self.dtype;
        let mut data = vec![0.0; lead * out_h * out_w];
        for l in 0..lead {
            let src = &self.data[l * h * w..(l + 1) * h * w];
            let dst = &mut data[l * out_h * out_w..(l + 1) * out_h * out_w];
            for oy in 0..out_h {
                let (y0, y1, fy) = bilinear_axis(oy, out_h, h);
                for ox in 0..out_w {
                    let (x0, x1, fx) = bilinear_axis(ox, out_w, w);
                    let v = src[y0 * w + x0] * (1.0 - fy) * (1.0 - fx)
                        + src[y0 * w + x1] * (1.0 - fy) * fx
                        + src[y1 * w + x0] * fy * (1.0 - fx)
                        + src[y1 * w + x1] * fy * fx;
                    dst[oy * out_w + ox] = dtype.quantize(v);
                }
            }
        }
        Tensor::from_vec(&out_shape, data, dtype)
    }

    /// Nearest-neighbor resize of the spatial axes (half-pixel centers).
    pub fn resize_nearest(&self, out_h: usize, out_w: usize) -> TensorResult<Tensor> {
        let (h, w) = self.spatial()?;
        if out_h == h && out_w == w {
            return Ok(self.clone());
        }
        let lead: usize = self.shape[..self.shape.len() - 2].iter().product();
        let mut out_shape = self.shape.clone();
        let r = out_shape.len();
        out_shape[r - 2] = out_h;
        out_shape[r - 1] = out_w;
        let mut data = vec![0.0; lead * out_h * out_w];
        for l in 0..lead {
            let src = &self.data[l * h * w..(l + 1) * h * w];
            let dst = &mut data[l * out_h * out_w..(l + 1) * out_h * out_w];
            for oy in 0..out_h {
                let sy = nearest_axis(oy, out_h, h);
                for ox in 0..out_w {
                    let sx = nearest_axis(ox, out_w, w);
                    dst[oy * out_w + ox] = src[sy * w + sx];
                }
            }
        }
        Tensor::from_vec(&out_shape, data, self.dtype)
    }

    /// True when every element is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Copy of the tensor with one flat element replaced.
    pub fn with_value_at(&self, idx: usize, v: f64) -> Tensor {
        let mut data = self.data.to_vec();
        data[idx] = self.dtype.quantize(v);
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(data),
            dtype: self.dtype,
        }
    }
}

/// Source indices and interpolation weight for one output coordinate.
pub(crate) fn bilinear_axis(o: usize, out_n: usize, in_n: usize) -> (usize, usize, f64) {
    let src = (o as f64 + 0.5) * in_n as f64 / out_n as f64 - 0.5;
    let src = src.clamp(0.0, (in_n - 1) as f64);
    let i0 = src.floor() as usize;
    let i1 = (i0 + 1).min(in_n - 1);
    (i0, i1, src - i0 as f64)
}

fn nearest_axis(o: usize, out_n: usize, in_n: usize) -> usize {
    let src = (o as f64 + 0.5) * in_n as f64 / out_n as f64 - 0.5;
    (src.round().max(0.0) as usize).min(in_n - 1)
}

/// Numerically stable logistic function: never exponentiates a positive arg.
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_shape(shape: &[usize]) -> TensorResult<usize> {
    if shape.is_empty() || shape.iter().any(|&d| d == 0) {
        return Err(TensorError::InvalidShape {
            shape: shape.to_vec(),
        });
    }
    Ok(shape.iter().product())
}
