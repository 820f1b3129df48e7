use crate::error::{Result, TensorError};
use crate::scalar::Scalar;

/// Dense row-major array of rank 1..=3.
///
/// The value half of a tape node: shape plus data. Gradients, when
/// present, live next to the value in the tape node and always share
/// its shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Scalar> Tensor<F> {
    pub fn new(shape: &[usize], data: Vec<F>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 3 {
            return Err(TensorError::invalid(
                "tensor",
                format!("rank must be 1..=3, got {}", shape.len()),
            ));
        }
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(TensorError::invalid(
                "tensor",
                format!(
                    "shape {:?} expects {} elements, got {}",
                    shape,
                    expect,
                    data.len()
                ),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![F::zero(); len],
        }
    }

    pub fn full(shape: &[usize], v: F) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; len],
        }
    }

    pub fn scalar(v: F) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    /// Row-major matrix constructor.
    pub fn matrix(rows: usize, cols: usize, data: Vec<F>) -> Result<Self> {
        Tensor::new(&[rows, cols], data)
    }

    pub fn from_rows(rows: &[Vec<F>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |v| v.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(TensorError::invalid("tensor", "ragged rows"));
            }
            data.extend_from_slice(row);
        }
        Tensor::new(&[r, c], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of rows (first axis).
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Elements per row (product of trailing axes).
    pub fn row_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape == [1]
    }

    pub fn item(&self) -> F {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[F] {
        let w = self.row_len();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [F] {
        let w = self.row_len();
        &mut self.data[i * w..(i + 1) * w]
    }

    pub fn get2(&self, i: usize, j: usize) -> F {
        debug_assert_eq!(self.rank(), 2);
        self.data[i * self.shape[1] + j]
    }

    pub fn set2(&mut self, i: usize, j: usize, v: F) {
        debug_assert_eq!(self.rank(), 2);
        self.data[i * self.shape[1] + j] = v;
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != self.data.len() || shape.is_empty() || shape.len() > 3 {
            return Err(TensorError::shape("reshape", &self.shape, shape));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Convert every element to f64 (checkpoint and file interchange).
    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.as_f64()).collect()
    }

    pub fn from_f64_slice(shape: &[usize], data: &[f64]) -> Result<Tensor<F>> {
        Tensor::new(shape, data.iter().map(|&v| F::c(v)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_data_length_must_agree() {
        assert!(Tensor::<f64>::new(&[2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::<f64>::new(&[2, 2], vec![1.0; 4]).is_ok());
    }

    #[test]
    fn rank_limited_to_three() {
        assert!(Tensor::<f64>::new(&[1, 1, 1, 1], vec![1.0]).is_err());
        assert!(Tensor::<f64>::new(&[], vec![]).is_err());
    }

    #[test]
    fn row_access_is_row_major() {
        let t = Tensor::matrix(2, 3, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(t.row(1), &[3.0, 4.0, 5.0]);
        assert_eq!(t.get2(0, 2), 2.0);
    }
}
