//! Dense rank-4 f32 tensors in NCHW layout. Lower-rank values use degenerate
//! leading dims (a scalar is `[1,1,1,1]`).

use crate::error::{Result, TensorError};

pub type Shape = [usize; 4];

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f32>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel == 0 {
            return Err(TensorError::InvalidArgument(format!("empty shape {shape:?}")));
        }
        if data.len() != numel {
            return Err(TensorError::ShapeMismatch {
                op: "Tensor::new",
                detail: format!("shape {shape:?} needs {numel} values, got {}", data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![0.0; numel] }
    }

    pub fn full(shape: Shape, value: f32) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![value; numel] }
    }

    pub fn scalar(value: f32) -> Self {
        Tensor { shape: [1, 1, 1, 1], data: vec![value] }
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.shape == [1, 1, 1, 1]
    }

    pub fn scalar_value(&self) -> Result<f32> {
        if !self.is_scalar() {
            return Err(TensorError::NonScalarLoss(self.shape));
        }
        Ok(self.data[0])
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Reinterpret with a new shape of identical element count.
    pub fn reshaped(&self, shape: Shape) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                detail: format!("{:?} -> {shape:?}", self.shape),
            });
        }
        Ok(Tensor { shape, data: self.data.clone() })
    }

    /// Exact bitwise equality, distinguishing NaN payloads and signed zeros.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self.data.len() == other.data.len()
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_length() {
        assert!(Tensor::new([1, 1, 2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new([1, 1, 2, 2], vec![0.0; 4]).is_ok());
    }

    #[test]
    fn scalar_roundtrip() {
        let t = Tensor::scalar(3.5);
        assert!(t.is_scalar());
        assert_eq!(t.scalar_value().unwrap(), 3.5);
    }

    #[test]
    fn bit_eq_distinguishes_negative_zero() {
        let a = Tensor::scalar(0.0);
        let b = Tensor::scalar(-0.0);
        assert_eq!(a, b); // PartialEq: 0.0 == -0.0
        assert!(!a.bit_eq(&b));
    }
}
