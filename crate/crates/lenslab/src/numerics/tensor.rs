//! Dense row-major f32 tensors.
//!
//! Tensors are immutable values; operations produce new tensors. Data is
//! behind an `Arc` so cloning a tensor (e.g. binding frozen weights into a
//! fresh autodiff graph every step) costs nothing.

use std::sync::Arc;

use super::rng::Rng;

#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("contract violation: {0}")]
    Contract(String),
}

#[derive(Debug, Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f32>>,
    requires_grad: bool,
}

impl Tensor {
    /// Builds a tensor, validating length and rejecting NaN/Inf.
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, TensorError> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::ShapeMismatch(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { index });
        }
        Ok(Tensor { shape, data: Arc::new(data), requires_grad: false })
    }

    /// Internal constructor for op outputs; skips the finiteness scan on the
    /// hot path but keeps a NaN check under `debug_assertions`. -inf is legal
    /// mid-graph (masked attention scores); NaN never is.
    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        debug_assert!(!data.iter().any(|v| v.is_nan()), "op produced NaN");
        Tensor { shape, data: Arc::new(data), requires_grad: false }
    }

    /// Attention mask: entries must be exactly 0.0 or -inf. This is the one
    /// sanctioned source of non-finite values.
    pub fn attn_mask(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, TensorError> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::ShapeMismatch(format!(
                "shape {shape:?} implies {numel} elements, got {}",
                data.len()
            )));
        }
        if let Some(index) =
            data.iter().position(|&v| !(v == 0.0 || v == f32::NEG_INFINITY))
        {
            return Err(TensorError::Contract(format!(
                "mask entry at {index} must be 0 or -inf"
            )));
        }
        Ok(Tensor { shape, data: Arc::new(data), requires_grad: false })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: Arc::new(vec![0.0; n]), requires_grad: false }
    }

    pub fn full(shape: Vec<usize>, value: f32) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: Arc::new(vec![value; n]), requires_grad: false }
    }

    pub fn scalar(value: f32) -> Self {
        Tensor::from_op(vec![], vec![value])
    }

    /// I.i.d. normal entries scaled by `std`.
    pub fn randn(shape: Vec<usize>, std: f32, rng: &mut Rng) -> Self {
        let n = shape.iter().product();
        let mut data = vec![0.0f32; n];
        rng.fill_normal(&mut data);
        for v in data.iter_mut() {
            *v *= std;
        }
        Tensor { shape, data: Arc::new(data), requires_grad: false }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Scalar value of a 0-d (or single-element) tensor.
    pub fn item(&self) -> f32 {
        debug_assert_eq!(self.numel(), 1);
        self.data[0]
    }

    /// Same data, new shape. Lengths must agree.
    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Self, TensorError> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(TensorError::ShapeMismatch(format!(
                "cannot reshape {:?} to {:?}",
                self.shape, shape
            )));
        }
        Ok(Tensor { shape, data: self.data.clone(), requires_grad: self.requires_grad })
    }

    /// Validates every entry is finite (module-boundary check).
    pub fn validate_finite(&self) -> Result<(), TensorError> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(TensorError::NonFinite { index }),
            None => Ok(()),
        }
    }

    /// Mutable access for in-place parameter updates (optimizer only).
    /// Clones the buffer if it is shared.
    pub(crate) fn data_mut(&mut self) -> &mut Vec<f32> {
        Arc::make_mut(&mut self.data)
    }
}

impl PartialEq for Tensor {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data.as_slice() == other.data.as_slice()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_length_mismatch() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        let err = Tensor::new(vec![3], vec![1.0, f32::NAN, 0.0]).unwrap_err();
        match err {
            TensorError::NonFinite { index } => assert_eq!(index, 1),
            other => panic!("unexpected error {other:?}"),
        }
        assert!(Tensor::new(vec![1], vec![f32::INFINITY]).is_err());
    }

    #[test]
    fn reshape_preserves_data() {
        let t = Tensor::new(vec![2, 3], (0..6).map(|i| i as f32).collect()).unwrap();
        let r = t.reshaped(vec![3, 2]).unwrap();
        assert_eq!(r.data(), t.data());
        assert!(t.reshaped(vec![4]).is_err());
    }
}
