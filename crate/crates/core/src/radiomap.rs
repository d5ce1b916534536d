use crate::error::{Error, Result};

/// Nonnegative scalar field over a grid, stored row-major (`values[y * width + x]`).
///
/// Used for main-path, multipath and residual power maps as well as for
/// derived fields such as the distance-to-transmitter channel.
#[derive(Clone, Debug, PartialEq)]
pub struct RadioMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl RadioMap {
    pub fn zeros(width: usize, height: usize) -> Self {
        RadioMap { width, height, values: vec![0.0; width * height] }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::from_values(width, height, vec![value; width * height])
    }

    /// Wraps `values`, checking the length and that every entry is finite and `>= 0`.
    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::arg(format!(
                "map of {width}x{height} needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < 0.0) {
            return Err(Error::arg(format!("map value {v} at index {i} is negative or non-finite")));
        }
        Ok(RadioMap { width, height, values })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn same_shape(&self, other: &RadioMap) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Euclidean norm over cells (unit area element).
    pub fn norm2(&self) -> f64 {
        crate::numeric::norm2(&self.values)
    }
}

impl AsRef<[f64]> for RadioMap {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}
