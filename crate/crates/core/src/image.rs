//! Vectorized grayscale images: a flat f64 buffer plus the spatial shape
//! it was flattened from (row-major).

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ImageVector {
    data: Vec<f64>,
    height: usize,
    width: usize,
}

impl ImageVector {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "image: {} values cannot fill {}x{}",
                data.len(),
                height,
                width
            )));
        }
        Ok(ImageVector { data, height, width })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
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

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

impl AsRef<[f64]> for ImageVector {
    fn as_ref(&self) -> &[f64] {
        &self.data
    }
}
