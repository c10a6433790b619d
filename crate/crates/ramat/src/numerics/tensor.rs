use crate::{Error, Result};

/// Dense row-major f32 tensor. Values are validated finite at construction;
/// `grad` is allocated by the tape during backward for `requires_grad`
/// tensors and mirrors `data`'s shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
    requires_grad: bool,
    grad: Option<Vec<f32>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("zero dimension in shape {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} implies {expected} elements, got {}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite value {bad} in tensor of shape {shape:?}"
            )));
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(v: f32) -> Result<Self> {
        Self::new(vec![1], vec![v])
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(usize) -> f32) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(shape, (0..n).map(&mut f).collect())
    }

    /// Marks this tensor trainable. Consumes and returns self for chaining.
    pub fn trainable(mut self) -> Self {
        self.requires_grad = true;
        self
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

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f32]> {
        self.grad.as_deref()
    }

    pub(crate) fn alloc_grad(&mut self) {
        if self.grad.is_none() {
            self.grad = Some(vec![0.0; self.data.len()]);
        }
    }

    pub(crate) fn grad_mut(&mut self) -> &mut [f32] {
        self.alloc_grad();
        self.grad.as_deref_mut().unwrap()
    }

    /// Rows of a 2-D tensor (or 1 for a 1-D tensor treated as a single row).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            1 => 1,
            2 => self.shape[0],
            _ => panic!("rows() on tensor of rank {}", self.shape.len()),
        }
    }

    /// Size of the last dimension.
    pub fn last_dim(&self) -> usize {
        *self.shape.last().expect("tensor has at least one dim")
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_shape_data_mismatch() {
        let err = Tensor::new(vec![2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn rejects_non_finite() {
        let err = Tensor::new(vec![2], vec![1.0, f32::NAN]).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
        let err = Tensor::new(vec![2], vec![f32::INFINITY, 0.0]).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }

    #[test]
    fn rejects_zero_dim() {
        assert!(Tensor::new(vec![0], vec![]).is_err());
    }

    #[test]
    fn shape_product_matches_len() {
        let t = Tensor::new(vec![3, 4], (0..12).map(|i| i as f32).collect()).unwrap();
        assert_eq!(t.numel(), 12);
        assert_eq!(t.rows(), 3);
        assert_eq!(t.last_dim(), 4);
    }
}
