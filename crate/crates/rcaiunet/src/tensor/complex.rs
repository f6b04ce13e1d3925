use super::{Tensor, TensorError, TensorResult};

/// Complex-valued companion to [`Tensor`], used for spectral intermediates.
///
/// Stored as split real/imaginary f64 buffers regardless of the real tensor's
/// dtype; spectra are transient and precision there is free.
#[derive(Clone, Debug)]
pub struct ComplexTensor {
    shape: Vec<usize>,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl ComplexTensor {
    pub fn new(shape: &[usize], re: Vec<f64>, im: Vec<f64>) -> TensorResult<ComplexTensor> {
        let n: usize = shape.iter().product();
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(TensorError::InvalidShape {
                shape: shape.to_vec(),
            });
        }
        if re.len() != n || im.len() != n {
            return Err(TensorError::DataLength {
                expected: n,
                got: re.len().max(im.len()),
            });
        }
        Ok(ComplexTensor {
            shape: shape.to_vec(),
            re,
            im,
        })
    }

    pub fn zeros(shape: &[usize]) -> ComplexTensor {
        let n: usize = shape.iter().product();
        ComplexTensor {
            shape: shape.to_vec(),
            re: vec![0.0; n],
            im: vec![0.0; n],
        }
    }

    /// Embeds a real tensor with zero imaginary part.
    pub fn from_real(t: &Tensor) -> ComplexTensor {
        ComplexTensor {
            shape: t.shape().to_vec(),
            re: t.data().to_vec(),
            im: vec![0.0; t.len()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    pub fn re(&self) -> &[f64] {
        &self.re
    }

    pub fn im(&self) -> &[f64] {
        &self.im
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.re, &mut self.im)
    }

    /// Largest absolute imaginary component.
    pub fn max_abs_im(&self) -> f64 {
        self.im.iter().fold(0.0, |m, &x| m.max(x.abs()))
    }

    /// Spatial dims (last two axes).
    pub fn spatial(&self) -> (usize, usize) {
        let r = self.shape.len();
        assert!(r >= 2, "complex tensor needs spatial axes");
        (self.shape[r - 2], self.shape[r - 1])
    }

    /// Product of all axes before the spatial two.
    pub fn lead(&self) -> usize {
        let r = self.shape.len();
        self.shape[..r - 2].iter().product()
    }
}
