use crate::error::{MtdError, Result};

/// A square real image stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    side: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(side: usize) -> Self {
        Image {
            side,
            data: vec![0.0; side * side],
        }
    }

    pub fn from_vec(side: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != side * side {
            return Err(MtdError::invalid(format!(
                "expected {} pixels for a {side}x{side} image, got {}",
                side * side,
                data.len()
            )));
        }
        Ok(Image { side, data })
    }

    #[inline]
    pub fn side(&self) -> usize {
        self.side
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.side + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.side + col] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    /// Largest absolute pixel difference.
    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
