use crate::error::{Error, Result};

/// Row-major `f32` tensor. Quantization runs along the last dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorView {
    data: Vec<f32>,
    shape: Vec<usize>,
}

impl TensorView {
    /// Fails if the shape is empty, has a zero dimension, disagrees with the
    /// data length, or any entry is not finite.
    pub fn new(data: Vec<f32>, shape: Vec<usize>) -> Result<Self> {
        check_shape(&shape)?;
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} holds {n} elements but {} were given",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { data, shape })
    }

    /// A single row.
    pub fn from_row(data: Vec<f32>) -> Result<Self> {
        let n = data.len();
        Self::new(data, vec![n])
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        check_shape(&shape)?;
        let n = shape.iter().product();
        Ok(Self {
            data: vec![0.0; n],
            shape,
        })
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Length of the quantization axis.
    pub fn row_len(&self) -> usize {
        *self.shape.last().unwrap()
    }

    /// Product of every dimension but the last.
    pub fn rows(&self) -> usize {
        self.data.len() / self.row_len()
    }

    pub fn row(&self, r: usize) -> &[f32] {
        let n = self.row_len();
        &self.data[r * n..(r + 1) * n]
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }
}

pub(crate) fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return Err(Error::Shape("rank 0 tensors are not supported".into()));
    }
    if shape.contains(&0) {
        return Err(Error::Shape(format!("shape {shape:?} has a zero dimension")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_input() {
        assert!(TensorView::new(vec![1.0; 3], vec![2, 2]).is_err());
        assert!(TensorView::new(vec![], vec![]).is_err());
        assert!(TensorView::new(vec![f32::NAN], vec![1]).is_err());
        assert!(TensorView::zeros(vec![3, 0]).is_err());
    }

    #[test]
    fn rows_follow_last_axis() {
        let t = TensorView::new((0..24).map(|v| v as f32).collect(), vec![2, 3, 4]).unwrap();
        assert_eq!(t.rows(), 6);
        assert_eq!(t.row(1), &[4.0, 5.0, 6.0, 7.0]);
        assert_eq!(t.max_abs(), 23.0);
    }
}
